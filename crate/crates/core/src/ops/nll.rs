use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Floor applied to a probability before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Tolerance on `|sum(row) - 1|` for a probability row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl<T: Real> Tape<T> {
    /// `-sum_j weights[labels[j]] * log(max(probs[j, labels[j]], 1e-12))`,
    /// summed over the batch.
    pub fn weighted_nll(&mut self, probs: Var, labels: &[usize], weights: &[T]) -> Result<Var> {
        let value = weighted_nll_value(self.value(probs), labels, weights)?;
        let out = Tensor::scalar(value);
        Ok(self.push(
            out,
            Op::WeightedNll {
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }
}

pub(crate) fn weighted_nll_value<T: Real>(probs: &Tensor<T>, labels: &[usize], weights: &[T]) -> Result<T> {
    let (n, k) = probs.dims2()?;
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for a batch of {n}", labels.len())));
    }
    if weights.len() != k {
        return Err(Error::contract(format!("{} class weights for {k} classes", weights.len())));
    }
    let clamp = T::lit(LOG_CLAMP);
    let mut total = T::zero();
    for (j, (row, &label)) in probs.data().chunks_exact(k).zip(labels).enumerate() {
        if label >= k {
            return Err(Error::Label { label, num_classes: k });
        }
        let row_sum: T = row.iter().copied().sum();
        if (row_sum.as_f64() - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::contract(format!("probability row {j} sums to {row_sum}, not 1")));
        }
        total += -weights[label] * row[label].max(clamp).ln();
    }
    Ok(total)
}

pub(super) fn weighted_nll_backward<T: Real>(probs: &Tensor<T>, labels: &[usize], weights: &[T], upstream: T) -> Vec<T> {
    let k = probs.shape()[1];
    let clamp = T::lit(LOG_CLAMP);
    let mut dp = vec![T::zero(); probs.numel()];
    for (j, &label) in labels.iter().enumerate() {
        let p = probs.data()[j * k + label];
        if p > clamp {
            dp[j * k + label] = -upstream * weights[label] / p;
        }
    }
    dp
}
