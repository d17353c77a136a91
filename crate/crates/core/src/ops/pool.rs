use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Means over non-overlapping `factor x factor` windows.
pub fn downsample_avg_forward<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if factor == 0 {
        return Err(Error::config("downsample factor must be positive"));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(format!(
            "downsample by {factor}: extents {h}x{w} are not divisible; pad to {}x{} first",
            h.div_ceil(factor) * factor,
            w.div_ceil(factor) * factor
        )));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::lit((factor * factor) as f64);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks_exact(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..factor {
                    let row = (oy * factor + dy) * w + ox * factor;
                    acc += plane[row..row + factor].iter().copied().sum::<T>();
                }
                out.push(acc * inv);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

impl<T: Real> Tape<T> {
    pub fn downsample_avg(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = downsample_avg_forward(self.value(input), factor)?;
        if factor == 1 {
            return Ok(input);
        }
        Ok(self.push(out, Op::Downsample { input, factor }))
    }

    /// Per-channel spatial mean: `[N, C, H, W]` to `[N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let inv = T::one() / T::lit((h * w) as f64);
        let data = self
            .value(input)
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(input)))
    }
}

pub(super) fn downsample_backward<T: Real>(input: &Tensor<T>, factor: usize, grad: &[T]) -> Result<Vec<T>> {
    let (_, _, h, w) = input.dims4()?;
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::lit((factor * factor) as f64);
    let mut dx = vec![T::zero(); input.numel()];
    for (plane, gplane) in dx.chunks_exact_mut(h * w).zip(grad.chunks_exact(oh * ow)) {
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = gplane[(y / factor) * ow + x / factor] * inv;
            }
        }
    }
    Ok(dx)
}

pub(super) fn global_avg_pool_backward<T: Real>(input: &Tensor<T>, grad: &[T]) -> Result<Vec<T>> {
    let (_, _, h, w) = input.dims4()?;
    let inv = T::one() / T::lit((h * w) as f64);
    Ok(grad.iter().flat_map(|&g| std::iter::repeat_n(g * inv, h * w)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_mean() {
        let x = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(downsample_avg_forward(&x, 2).unwrap().data(), &[2.5]);
        assert_eq!(downsample_avg_forward(&x, 1).unwrap(), x);
    }

    #[test]
    fn indivisible_extent_reports_padding() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 6, 8]);
        let err = downsample_avg_forward(&x, 4).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("8x8")), "{err}");
    }

    #[test]
    fn global_pool_of_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![2, 3, 4, 5], 1.25));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.shape(y), &[2, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 1.25));
        let z = tape.constant(Tensor::from_fn(vec![2, 3, 1, 1], |i| i as f64));
        let p = tape.global_avg_pool(z).unwrap();
        assert_eq!(tape.value(p).data(), tape.value(z).data());
    }
}
