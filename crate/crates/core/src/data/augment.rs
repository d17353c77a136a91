use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Random training-time transforms. Each range is sampled uniformly;
/// collapsing a range to one value makes that transform deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    /// `(height, width)` of the output.
    pub crop: (usize, usize),
    /// Resize factor.
    pub scale_range: (f64, f64),
    /// Affine rotation, degrees.
    pub affine_angle_range: (f64, f64),
    /// Maximum shift as a fraction of each extent.
    pub translation_fraction: f64,
    /// A second rotation drawn from `[-d, d]` degrees.
    pub rotation_degrees: f64,
    /// Additive shift on `[0, 1]` values.
    pub brightness_range: (f64, f64),
    /// Multiplicative factor applied about the image mean.
    pub contrast_range: (f64, f64),
    pub enabled: bool,
}

impl AugmentationPolicy {
    /// Scale in `[0.5, 1]`, rotation within ±20° then ±10°, shifts up to half
    /// the extent, brightness ±0.2 and contrast 1±0.1.
    pub fn standard(crop: (usize, usize)) -> Self {
        AugmentationPolicy {
            crop,
            scale_range: (0.5, 1.0),
            affine_angle_range: (-20.0, 20.0),
            translation_fraction: 0.5,
            rotation_degrees: 10.0,
            brightness_range: (-0.2, 0.2),
            contrast_range: (0.9, 1.1),
            enabled: true,
        }
    }

    /// Every transform collapsed to the identity, except the crop.
    pub fn identity(crop: (usize, usize)) -> Self {
        AugmentationPolicy {
            crop,
            scale_range: (1.0, 1.0),
            affine_angle_range: (0.0, 0.0),
            translation_fraction: 0.0,
            rotation_degrees: 0.0,
            brightness_range: (0.0, 0.0),
            contrast_range: (1.0, 1.0),
            enabled: true,
        }
    }

    pub fn disabled(crop: (usize, usize)) -> Self {
        AugmentationPolicy {
            enabled: false,
            ..Self::standard(crop)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("scale", self.scale_range),
            ("affine angle", self.affine_angle_range),
            ("brightness", self.brightness_range),
            ("contrast", self.contrast_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("{name} range ({lo}, {hi}) is not ordered")));
            }
        }
        if self.scale_range.0 <= 0.0 {
            return Err(Error::config("scale range must be positive"));
        }
        if !(self.translation_fraction >= 0.0) || !(self.rotation_degrees >= 0.0) {
            return Err(Error::config("translation fraction and rotation must be non-negative"));
        }
        if self.crop.0 == 0 || self.crop.1 == 0 {
            return Err(Error::config("crop extents must be positive"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn image_dims<T: Real>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::dim(format!("expected an image [C, H, W], got {s:?}"))),
    }
}

fn check_crop(h: usize, w: usize, crop: (usize, usize)) -> Result<()> {
    if crop.0 > h || crop.1 > w {
        return Err(Error::dim(format!("crop {}x{} exceeds image {h}x{w}", crop.0, crop.1)));
    }
    Ok(())
}

/// Central `crop` window of a `[C, H, W]` image.
pub fn center_crop<T: Real>(image: &Tensor<T>, crop: (usize, usize)) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    check_crop(h, w, crop)?;
    if crop == (h, w) {
        return Ok(image.clone());
    }
    let (y0, x0) = ((h - crop.0) / 2, (w - crop.1) / 2);
    let d = image.data();
    Ok(Tensor::from_fn(vec![c, crop.0, crop.1], |i| {
        let (ch, rest) = (i / (crop.0 * crop.1), i % (crop.0 * crop.1));
        let (y, x) = (rest / crop.1, rest % crop.1);
        d[(ch * h + y0 + y) * w + x0 + x]
    }))
}

/// Geometric warp (scale, rotation, shift, second rotation; bilinear with
/// zero fill), random crop, brightness then contrast, clamped to `[0, 1]`.
/// The draws come from `rng` in a fixed order, so a replayed stream
/// reproduces the output bit for bit.
pub fn augment<T: Real>(image: &Tensor<T>, policy: &AugmentationPolicy, rng: &mut Rng) -> Result<Tensor<T>> {
    policy.validate()?;
    let (c, h, w) = image_dims(image)?;
    check_crop(h, w, policy.crop)?;

    let scale = uniform(rng, policy.scale_range);
    let angle = uniform(rng, policy.affine_angle_range).to_radians();
    let t = policy.translation_fraction;
    let tx = uniform(rng, (-t, t)) * w as f64;
    let ty = uniform(rng, (-t, t)) * h as f64;
    let r = policy.rotation_degrees;
    let angle2 = uniform(rng, (-r, r)).to_radians();
    let (ch, cw) = policy.crop;
    let y0 = rng.random_range(0..=h - ch);
    let x0 = rng.random_range(0..=w - cw);
    let brightness = uniform(rng, policy.brightness_range);
    let contrast = uniform(rng, policy.contrast_range);

    // forward map p' = c + R2 (s R1 (p - c) + t); sample at its inverse
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s1, c1) = angle.sin_cos();
    let (s2, c2) = angle2.sin_cos();
    let d = image.data();
    let plane = h * w;
    let mut out = vec![0.0f64; c * ch * cw];
    for oy in 0..ch {
        for ox in 0..cw {
            let (dx, dy) = ((x0 + ox) as f64 - cx, (y0 + oy) as f64 - cy);
            // undo R2, then the shift, then R1 and the scale
            let (ux, uy) = (c2 * dx + s2 * dy - tx, -s2 * dx + c2 * dy - ty);
            let sx = (c1 * ux + s1 * uy) / scale + cx;
            let sy = (-s1 * ux + c1 * uy) / scale + cy;
            let (fx, fy) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - fx, sy - fy);
            let taps = [
                (0, 0, (1.0 - ax) * (1.0 - ay)),
                (1, 0, ax * (1.0 - ay)),
                (0, 1, (1.0 - ax) * ay),
                (1, 1, ax * ay),
            ];
            for (kx, ky, weight) in taps {
                let (ix, iy) = (fx as isize + kx, fy as isize + ky);
                if weight == 0.0 || ix < 0 || iy < 0 || ix >= w as isize || iy >= h as isize {
                    continue;
                }
                let src = iy as usize * w + ix as usize;
                for k in 0..c {
                    out[(k * ch + oy) * cw + ox] += weight * d[k * plane + src].as_f64();
                }
            }
        }
    }

    out.iter_mut().for_each(|v| *v += brightness);
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    Tensor::new(
        vec![c, ch, cw],
        out.into_iter()
            .map(|v| T::lit(((v - mean) * contrast + mean).clamp(0.0, 1.0)))
            .collect(),
    )
}
