//! Class-weighted cross-entropy.
//!
//! Class `y` is weighted by `w_y = 1 - N_y / N`, where `N_y` counts the
//! training images of class `y` and `N` all training images, so rare
//! classes contribute more per sample.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::weighted_nll_value;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
    counts: Vec<usize>,
    total: usize,
}

impl ClassWeights {
    /// Weights from per-class training counts. Fails when fewer than two
    /// classes have any samples, since the only non-empty class would get
    /// weight 0 and the loss would vanish.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        let non_empty = counts.iter().filter(|&&c| c > 0).count();
        if non_empty < 2 {
            return Err(Error::DegenerateWeights(format!(
                "{non_empty} of {} classes have samples; at least 2 are needed",
                counts.len()
            )));
        }
        let weights = counts.iter().map(|&c| 1.0 - c as f64 / total as f64).collect();
        Ok(ClassWeights {
            weights,
            counts: counts.to_vec(),
            total,
        })
    }

    /// Every class weighted 1, i.e. plain cross-entropy.
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; num_classes],
            counts: vec![0; num_classes],
            total: 0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn as_real<T: Real>(&self) -> Vec<T> {
        self.weights.iter().map(|&w| T::lit(w)).collect()
    }
}

/// Batch-summed weighted cross-entropy of `[N, K]` probability rows.
pub fn weighted_cross_entropy_value<T: Real>(probs: &Tensor<T>, labels: &[usize], weights: &ClassWeights) -> Result<T> {
    weighted_nll_value(probs, labels, &weights.as_real())
}

/// Tape version of [`weighted_cross_entropy_value`].
pub fn weighted_cross_entropy<T: Real>(tape: &mut Tape<T>, probs: Var, labels: &[usize], weights: &ClassWeights) -> Result<Var> {
    tape.weighted_nll(probs, labels, &weights.as_real())
}

/// Softmax over `[N, K]` logits followed by the weighted cross-entropy.
pub fn softmax_cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize], weights: &ClassWeights) -> Result<Var> {
    let probs = tape.softmax(logits)?;
    weighted_cross_entropy(tape, probs, labels, weights)
}

/// Class indices of one-hot `[N, K]` rows.
pub fn labels_from_one_hot<T: Real>(one_hot: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, k) = one_hot.dims2()?;
    one_hot
        .data()
        .chunks_exact(k)
        .enumerate()
        .map(|(j, row)| {
            let hot: Vec<usize> = (0..k).filter(|&c| row[c] == T::one()).collect();
            let rest_zero = row.iter().all(|&v| v == T::zero() || v == T::one());
            match hot[..] {
                [c] if rest_zero => Ok(c),
                _ => Err(Error::contract(format!("row {j} is not one-hot"))),
            }
        })
        .collect()
}
