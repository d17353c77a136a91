//! Dilated 2-D convolution (cross-correlation, no kernel flip).
//!
//! Input sample `(iy, ix)` feeding output `(oy, ox)` through kernel tap
//! `(i, j)` is `iy = oy * stride - pad + i * rate` (likewise for `x`).
//! [`conv2d_direct`] evaluates that definition with plain loops and is the
//! reference; the tape operator lowers each sample to a dilated im2col
//! matrix followed by one GEMM.

use rayon::prelude::*;

use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    /// Stride 1, rate 1, no padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
        }
    }

    /// Square odd kernel at the given rate with "same" padding
    /// `rate * (k - 1) / 2`.
    pub fn same(in_channels: usize, out_channels: usize, k: usize, rate: usize) -> Self {
        let pad = rate * (k.saturating_sub(1)) / 2;
        Self::new(in_channels, out_channels, (k, k)).with_dilation(rate).with_padding(pad)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, (1, 1))
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn with_dilation(mut self, rate: usize) -> Self {
        self.dilation = (rate, rate);
        self
    }

    pub fn with_padding(mut self, pad: usize) -> Self {
        self.padding = (pad, pad);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel height", self.kernel.0),
            ("kernel width", self.kernel.1),
            ("stride height", self.stride.0),
            ("stride width", self.stride.1),
            ("rate height", self.dilation.0),
            ("rate width", self.dilation.1),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("conv2d: {name} must be positive")));
            }
        }
        Ok(())
    }

    /// `rate * (k - 1) + 1` along each axis.
    pub fn effective_kernel(&self) -> (usize, usize) {
        (self.dilation.0 * (self.kernel.0 - 1) + 1, self.dilation.1 * (self.kernel.1 - 1) + 1)
    }

    /// `floor((in + 2 pad - effective_kernel) / stride) + 1` per axis.
    pub fn output_extent(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (ekh, ekw) = self.effective_kernel();
        let axis = |name: &str, extent: usize, pad: usize, ek: usize, stride: usize| {
            let padded = extent + 2 * pad;
            if padded < ek {
                return Err(Error::config(format!(
                    "conv2d: output {name} < 1 (input {extent} + 2*pad {pad} < effective kernel {ek})"
                )));
            }
            Ok((padded - ek) / stride + 1)
        };
        Ok((
            axis("height", height, self.padding.0, ekh, self.stride.0)?,
            axis("width", width, self.padding.1, ekw, self.stride.1)?,
        ))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
}

fn check_shapes<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &Conv2dSpec) -> Result<Geometry> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4()?;
    let expected = [spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1];
    if weight.shape() != expected {
        return Err(Error::dim(format!(
            "conv2d: weight shape {:?} does not match spec [F, C, kh, kw] = {expected:?}",
            weight.shape()
        )));
    }
    if c != spec.in_channels {
        return Err(Error::dim(format!(
            "conv2d: input has {c} channels but weights expect {}",
            spec.in_channels
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::dim(format!(
                "conv2d: bias shape {:?}, expected [{}]",
                b.shape(),
                spec.out_channels
            )));
        }
    }
    let (out_h, out_w) = spec.output_extent(h, w)?;
    Ok(Geometry { n, h, w, out_h, out_w })
}

/// Range of output columns `ox` whose tap `offset - pad + ox * stride` lands
/// inside `[0, extent)`.
fn valid_range(offset: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let first = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    // largest ox with offset + ox*stride < extent + pad
    let limit = extent + pad;
    let end = if offset >= limit {
        0
    } else {
        ((limit - offset - 1) / stride + 1).min(out)
    };
    (first.min(end), end)
}

fn im2col<T: Real>(x: &[T], spec: &Conv2dSpec, g: &Geometry, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (rh, rw) = spec.dilation;
    let (ph, pw) = spec.padding;
    let out_len = g.out_h * g.out_w;
    cols.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..spec.in_channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..kh {
            let (oy0, oy1) = valid_range(i * rh, ph, sh, g.h, g.out_h);
            for j in 0..kw {
                let row = ((c * kh + i) * kw + j) * out_len;
                let (ox0, ox1) = valid_range(j * rw, pw, sw, g.w, g.out_w);
                if ox0 == ox1 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = oy * sh + i * rh - ph;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut cols[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    if sw == 1 {
                        let ix0 = ox0 + j * rw - pw;
                        dst[ox0..ox1].copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * sw + j * rw - pw];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], spec: &Conv2dSpec, g: &Geometry, dx: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (rh, rw) = spec.dilation;
    let (ph, pw) = spec.padding;
    let out_len = g.out_h * g.out_w;
    for c in 0..spec.in_channels {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..kh {
            let (oy0, oy1) = valid_range(i * rh, ph, sh, g.h, g.out_h);
            for j in 0..kw {
                let row = ((c * kh + i) * kw + j) * out_len;
                let (ox0, ox1) = valid_range(j * rw, pw, sw, g.w, g.out_w);
                if ox0 == ox1 {
                    continue;
                }
                for oy in oy0..oy1 {
                    let iy = oy * sh + i * rh - ph;
                    let src = &cols[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in ox0..ox1 {
                        dst[ox * sw + j * rw - pw] += src[ox];
                    }
                }
            }
        }
    }
}

/// Convolution forward pass via dilated im2col and GEMM.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &Conv2dSpec) -> Result<Tensor<T>> {
    let g = check_shapes(input, weight, bias, spec)?;
    let f = spec.out_channels;
    let out_len = g.out_h * g.out_w;
    let in_len = spec.in_channels * g.h * g.w;
    let patch = spec.patch_len();
    let mut out = vec![T::zero(); g.n * f * out_len];
    let x = input.data();
    let wd = weight.data();
    out.par_chunks_mut(f * out_len).enumerate().for_each(|(s, y)| {
        let xs = &x[s * in_len..(s + 1) * in_len];
        if spec.is_plain_pointwise() {
            gemm(false, false, f, out_len, patch, wd, xs, y, false);
        } else {
            let mut cols = vec![T::zero(); patch * out_len];
            im2col(xs, spec, &g, &mut cols);
            gemm(false, false, f, out_len, patch, wd, &cols, y, false);
        }
        if let Some(b) = bias {
            for (row, &bv) in y.chunks_exact_mut(out_len).zip(b.data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new(vec![g.n, f, g.out_h, g.out_w], out)
}

/// Direct nested-loop convolution. Slow; used as the reference the GEMM
/// path is checked against.
pub fn conv2d_direct<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &Conv2dSpec) -> Result<Tensor<T>> {
    let g = check_shapes(input, weight, bias, spec)?;
    let (kh, kw) = spec.kernel;
    let c_in = spec.in_channels;
    let f_out = spec.out_channels;
    let x = input.data();
    let wd = weight.data();
    let mut out = Vec::with_capacity(g.n * f_out * g.out_h * g.out_w);
    for s in 0..g.n {
        for f in 0..f_out {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = T::zero();
                    for c in 0..c_in {
                        for i in 0..kh {
                            let iy = (oy * spec.stride.0 + i * spec.dilation.0) as isize - spec.padding.0 as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let ix = (ox * spec.stride.1 + j * spec.dilation.1) as isize - spec.padding.1 as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((s * c_in + c) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = wd[((f * c_in + c) * kh + i) * kw + j];
                                acc += xv * wv;
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b.data()[f];
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![g.n, f_out, g.out_h, g.out_w], out)
}

impl<T: Real> Tape<T> {
    /// Dilated 2-D convolution of `[N, C, H, W]` input with `[F, C, kh, kw]`
    /// weights and optional `[F]` bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: &Conv2dSpec) -> Result<Var> {
        let out = conv2d_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), spec)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec: *spec,
            },
        ))
    }

    /// 1x1 convolution: a per-pixel linear map over channels.
    pub fn pointwise_conv(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(weight);
        let [f, c, kh, kw] = shape[..] else {
            return Err(Error::dim(format!("pointwise_conv: weight must be 4-D, got {shape:?}")));
        };
        if (kh, kw) != (1, 1) {
            return Err(Error::config(format!("pointwise_conv: kernel must be 1x1, got {kh}x{kw}")));
        }
        self.conv2d(input, weight, bias, &Conv2dSpec::pointwise(c, f))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Real>(
    input: Var,
    weight: Var,
    bias: Option<Var>,
    spec: &Conv2dSpec,
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &[T],
    needs: impl Fn(Var) -> bool,
) -> Result<Vec<(Var, Vec<T>)>> {
    let g = check_shapes(x, w, None, spec)?;
    let f = spec.out_channels;
    let out_len = g.out_h * g.out_w;
    let in_len = spec.in_channels * g.h * g.w;
    let patch = spec.patch_len();
    let pointwise = spec.is_plain_pointwise();
    let xd = x.data();
    let wd = w.data();
    let mut result = Vec::with_capacity(3);

    if needs(input) {
        let mut dx = vec![T::zero(); g.n * in_len];
        dx.par_chunks_mut(in_len).enumerate().for_each(|(s, dxs)| {
            let gy = &grad[s * f * out_len..(s + 1) * f * out_len];
            if pointwise {
                gemm(true, false, patch, out_len, f, wd, gy, dxs, false);
            } else {
                let mut dcols = vec![T::zero(); patch * out_len];
                gemm(true, false, patch, out_len, f, wd, gy, &mut dcols, false);
                col2im(&dcols, spec, &g, dxs);
            }
        });
        result.push((input, dx));
    }

    if needs(weight) {
        let partials: Vec<Vec<T>> = (0..g.n)
            .into_par_iter()
            .map(|s| {
                let xs = &xd[s * in_len..(s + 1) * in_len];
                let gy = &grad[s * f * out_len..(s + 1) * f * out_len];
                let mut dw = vec![T::zero(); f * patch];
                if pointwise {
                    gemm(false, true, f, patch, out_len, gy, xs, &mut dw, false);
                } else {
                    let mut cols = vec![T::zero(); patch * out_len];
                    im2col(xs, spec, &g, &mut cols);
                    gemm(false, true, f, patch, out_len, gy, &cols, &mut dw, false);
                }
                dw
            })
            .collect();
        // fixed sample order keeps the reduction independent of worker count
        let mut dw = vec![T::zero(); f * patch];
        for p in partials {
            for (a, b) in dw.iter_mut().zip(p) {
                *a += b;
            }
        }
        result.push((weight, dw));
    }

    if let Some(b) = bias.filter(|b| needs(*b)) {
        let mut db = vec![T::zero(); f];
        for s in 0..g.n {
            for (fi, d) in db.iter_mut().enumerate() {
                let start = (s * f + fi) * out_len;
                *d += grad[start..start + out_len].iter().copied().sum::<T>();
            }
        }
        result.push((b, db));
    }
    Ok(result)
}


#[cfg(test)]
mod sweep {
    use super::*;

    #[test]
    fn gemm_matches_direct_over_geometry_sweep() {
        for (h, w) in (1..7).flat_map(|h| (1..5).map(move |w| (h, w))) {
            for k in [1, 3] {
                for stride in 1..4 {
                    for rate in 1..3 {
                        for pad in 0..3 {
                            let spec = Conv2dSpec::new(2, 2, (k, k))
                                .with_stride(stride)
                                .with_dilation(rate)
                                .with_padding(pad);
                            let input = Tensor::<f64>::from_fn(vec![1, 2, h, w], |i| (i % 5) as f64 - 2.0);
                            let weight = Tensor::from_fn(vec![2, 2, k, k], |i| (i % 3) as f64 - 1.0);
                            let Ok(slow) = conv2d_direct(&input, &weight, None, &spec) else {
                                continue;
                            };
                            let fast = conv2d_forward(&input, &weight, None, &spec).unwrap();
                            assert!(fast.max_abs_diff(&slow) < 1e-12, "{spec:?} {h}x{w}");
                        }
                    }
                }
            }
        }
    }
}
