//! Evaluation statistics: top-k accuracy, confusion matrices and
//! per-class precision, recall and F1 with unweighted macro averages.
//!
//! A score whose denominator is zero is reported as 0, and such classes
//! still count towards the macro mean.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Indices of the `k` largest entries of `row`, largest first; equal
/// values keep ascending index order.
pub fn top_k_indices<T: Real>(row: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].as_f64().total_cmp(&row[a].as_f64()).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Fraction of rows whose label is among the `k` highest scores.
pub fn top_k_accuracy<T: Real>(probs: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    let (n, classes) = probs.dims2()?;
    if k == 0 || k > classes {
        return Err(Error::Parameter(format!("k = {k} must lie in 1..={classes}")));
    }
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::contract("top-k accuracy of an empty batch"));
    }
    let hits = count_top_k_hits(probs.data(), classes, labels, k)?;
    Ok(hits as f64 / n as f64)
}

fn count_top_k_hits<T: Real>(data: &[T], classes: usize, labels: &[usize], k: usize) -> Result<usize> {
    let mut hits = 0;
    for (row, &label) in data.chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::Label {
                label,
                num_classes: classes,
            });
        }
        hits += usize::from(top_k_indices(row, k).contains(&label));
    }
    Ok(hits)
}

/// `K x K` counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::contract(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    /// Builds a matrix from row-major counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::dim("confusion matrix rows must all have K entries"));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(Error::Label {
                    label,
                    num_classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    /// Elementwise sum with a matrix built from another shard.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Samples whose true class is `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.row(class).iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn class_scores(&self, class: usize) -> ClassScores {
        let tp = self.get(class, class) as f64;
        let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
        let precision = ratio(tp, self.predicted_count(class));
        let recall = ratio(tp, self.support(class));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassScores {
            support: self.support(class),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub top1: f64,
    pub top5: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, top1: f64, top5: f64) -> Self {
        let k = confusion.num_classes();
        let per_class: Vec<ClassScores> = (0..k).map(|c| confusion.class_scores(c)).collect();
        let mean = |f: fn(&ClassScores) -> f64| {
            if k == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / k as f64
            }
        };
        EvalReport {
            macro_precision: mean(|s| s.precision),
            macro_recall: mean(|s| s.recall),
            macro_f1: mean(|s| s.f1),
            per_class,
            top1,
            top5,
            confusion,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.num_classes()
    }
}

/// `min(5, K)`: the top-5 statistic for models with fewer than five classes.
pub fn top5_k(classes: usize) -> usize {
    classes.min(5)
}

/// Collects batch results; shards can be merged in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalAccumulator {
    confusion: ConfusionMatrix,
    top1_hits: u64,
    top5_hits: u64,
}

impl EvalAccumulator {
    pub fn new(classes: usize) -> Self {
        EvalAccumulator {
            confusion: ConfusionMatrix::new(classes),
            top1_hits: 0,
            top5_hits: 0,
        }
    }

    pub fn add_batch<T: Real>(&mut self, probs: &Tensor<T>, labels: &[usize]) -> Result<()> {
        let (n, classes) = probs.dims2()?;
        if classes != self.confusion.num_classes() {
            return Err(Error::dim(format!(
                "expected {} class scores, got {classes}",
                self.confusion.num_classes()
            )));
        }
        if labels.len() != n {
            return Err(Error::contract(format!("{} labels for {n} rows", labels.len())));
        }
        let top5 = top5_k(classes);
        let mut batch = ConfusionMatrix::new(classes);
        let (mut h1, mut h5) = (0, 0);
        for (row, &label) in probs.data().chunks_exact(classes).zip(labels) {
            let ranked = top_k_indices(row, top5);
            batch.record(label, ranked[0])?;
            h1 += u64::from(ranked[0] == label);
            h5 += u64::from(ranked.contains(&label));
        }
        self.confusion.merge(&batch)?;
        self.top1_hits += h1;
        self.top5_hits += h5;
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalAccumulator) -> Result<()> {
        self.confusion.merge(&other.confusion)?;
        self.top1_hits += other.top1_hits;
        self.top5_hits += other.top5_hits;
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.confusion.total()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn finish(self) -> Result<EvalReport> {
        let n = self.len();
        if n == 0 {
            return Err(Error::contract("evaluation report of zero samples"));
        }
        let (top1, top5) = (self.top1_hits as f64 / n as f64, self.top5_hits as f64 / n as f64);
        Ok(EvalReport::from_confusion(self.confusion, top1, top5))
    }
}

/// Report for `[N, K]` probability rows; the prediction of a row is its
/// top-1 class.
pub fn compute_report<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<EvalReport> {
    let (_, classes) = probs.dims2()?;
    let mut acc = EvalAccumulator::new(classes);
    acc.add_batch(probs, labels)?;
    acc.finish()
}
