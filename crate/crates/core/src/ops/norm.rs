use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and (unbiased) variance tracked in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
}

impl<T: Real> RunningMoments<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_momentum(channels, DEFAULT_BN_MOMENTUM)
    }

    pub fn with_momentum(channels: usize, momentum: f64) -> Self {
        RunningMoments {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub enum NormMode<'a, T> {
    /// Normalize with batch moments and fold them into the running record.
    Train(&'a mut RunningMoments<T>),
    /// Normalize with the stored running moments.
    Eval(&'a RunningMoments<T>),
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::dim(format!("batch_norm expects [N,C] or [N,C,H,W], got {shape:?}"))),
    }
}

impl<T: Real> Tape<T> {
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: NormMode<'_, T>) -> Result<Var> {
        let x = self.value(input);
        let (n, c, plane) = layout(x.shape())?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "batch_norm: gamma/beta must be [{c}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let count = n * plane;
        let eps = T::lit(BN_EPS);
        let xd = x.data();
        let channel_values = |ch: usize| {
            (0..n).flat_map(move |s| {
                let start = (s * c + ch) * plane;
                xd[start..start + plane].iter().copied()
            })
        };

        let batch_stats = matches!(mode, NormMode::Train(_));
        let (mean, var) = match &mode {
            NormMode::Train(running) => {
                if running.channels() != c {
                    return Err(Error::dim(format!(
                        "batch_norm: running moments have {} channels, input has {c}",
                        running.channels()
                    )));
                }
                if count < 2 {
                    return Err(Error::DegenerateStatistics(count));
                }
                let inv_count = T::one() / T::lit(count as f64);
                let mean: Vec<T> = (0..c).map(|ch| channel_values(ch).sum::<T>() * inv_count).collect();
                let var: Vec<T> = (0..c)
                    .map(|ch| channel_values(ch).map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<T>() * inv_count)
                    .collect();
                (mean, var)
            }
            NormMode::Eval(running) => {
                if running.channels() != c {
                    return Err(Error::dim(format!(
                        "batch_norm: running moments have {} channels, input has {c}",
                        running.channels()
                    )));
                }
                (running.mean.clone(), running.var.clone())
            }
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut x_hat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let start = (s * c + ch) * plane;
                for idx in start..start + plane {
                    let xh = (xd[idx] - mean[ch]) * inv_std[ch];
                    x_hat[idx] = xh;
                    out[idx] = g[ch] * xh + b[ch];
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;

        if let NormMode::Train(running) = mode {
            let m = T::lit(running.momentum);
            let unbias = T::lit(count as f64 / (count as f64 - 1.0));
            for ch in 0..c {
                running.mean[ch] = (T::one() - m) * running.mean[ch] + m * mean[ch];
                running.var[ch] = (T::one() - m) * running.var[ch] + m * var[ch] * unbias;
            }
        }

        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batch_norm_backward<T: Real>(
    (input, gamma, beta): (Var, Var, Var),
    x: &Tensor<T>,
    g: &Tensor<T>,
    x_hat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    grad: &[T],
    needs: impl Fn(Var) -> bool,
) -> Result<Vec<(Var, Vec<T>)>> {
    let (n, c, plane) = layout(x.shape())?;
    let count = T::lit((n * plane) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * plane;
            for idx in start..start + plane {
                sum_dy[ch] += grad[idx];
                sum_dy_xhat[ch] += grad[idx] * x_hat[idx];
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if needs(input) {
        let gd = g.data();
        let mut dx = vec![T::zero(); grad.len()];
        for s in 0..n {
            for ch in 0..c {
                let start = (s * c + ch) * plane;
                let k = gd[ch] * inv_std[ch];
                for idx in start..start + plane {
                    dx[idx] = if batch_stats {
                        k / count * (count * grad[idx] - sum_dy[ch] - x_hat[idx] * sum_dy_xhat[ch])
                    } else {
                        k * grad[idx]
                    };
                }
            }
        }
        out.push((input, dx));
    }
    if needs(gamma) {
        out.push((gamma, sum_dy_xhat));
    }
    if needs(beta) {
        out.push((beta, sum_dy));
    }
    Ok(out)
}
