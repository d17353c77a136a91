//! Reverse-mode differentiation over a linear tape of executed operations.
//!
//! Every differentiable operator appends one node holding its output value
//! and whatever it saved for the backward pass. `backward` walks the nodes in
//! exact reverse order and accumulates gradients additively, so a value that
//! fans out into several consumers receives the sum of their contributions.

use crate::error::{Error, Result};
use crate::ops::{self, Conv2dSpec};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Softmax(Var),
    Downsample {
        input: Var,
        factor: usize,
    },
    GlobalAvgPool(Var),
    ConcatChannels(Vec<Var>),
    WeightedNll {
        probs: Var,
        labels: Vec<usize>,
        weights: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::GlobalAvgPool(a)
            | Op::Dropout { input: a, .. }
            | Op::Downsample { input: a, .. }
            | Op::WeightedNll { probs: a, .. } => vec![*a],
            Op::Conv2d { input, weight, bias, .. } | Op::Linear { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(bias.iter().copied());
                v
            }
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::ConcatChannels(parts) => parts.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Relu(..) => "relu",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::Softmax(..) => "softmax",
            Op::Downsample { .. } => "downsample_avg",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::ConcatChannels(..) => "concat",
            Op::WeightedNll { .. } => "weighted_nll",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// Record of one backward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackwardReport {
    /// Nodes whose gradient was propagated, in visiting order.
    pub visited: Vec<Var>,
}

/// Ordered record of executed operations. One tape is single-threaded;
/// independent tapes share nothing.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Gradients are only tracked when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Name of the operation that produced `var`.
    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }

    pub fn grad(&self, var: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[var.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Clears every gradient so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Propagates `d loss / d value` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardReport> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.requires_grad {
            return Err(Error::contract("loss does not depend on any value that requires grad"));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        let mut visited = Vec::new();
        for index in (0..=loss.0).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = node.grad.as_deref() else { continue };
            visited.push(Var(index));
            let contributions = ops::backward_op(&self.nodes, index, grad)?;
            for (var, g) in contributions {
                accumulate(&mut self.nodes[var.0].grad, g);
            }
        }
        Ok(BackwardReport { visited })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(values: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, -2.0, 3.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn fan_out_accumulates_exactly() {
        let build = |twice: bool| {
            let mut tape = Tape::new();
            let x = tape.leaf(vec1(&[0.3, -1.7, 2.2]), true);
            let r = tape.relu(x);
            let sq = tape.mul(r, x).unwrap();
            let f = tape.sum(sq);
            let loss = if twice {
                let r2 = tape.relu(x);
                let sq2 = tape.mul(r2, x).unwrap();
                let f2 = tape.sum(sq2);
                tape.add(f, f2).unwrap()
            } else {
                f
            };
            tape.backward(loss).unwrap();
            tape.grad(x).unwrap()
        };
        let once = build(false);
        let twice = build(true);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, 2.0]), true);
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn second_backward_needs_reset() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, 2.0]), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::DoubleBackward)));
        tape.reset_grads();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn visits_in_reverse_execution_order() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, -2.0]), true);
        let a = tape.relu(x);
        let b = tape.scale(a, 3.0);
        let c = tape.mul(b, x).unwrap();
        let s = tape.sum(c);
        let report = tape.backward(s).unwrap();
        assert_eq!(report.visited, vec![s, c, b, a]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, 2.0]), true);
        let k = tape.constant(vec1(&[5.0, 6.0]));
        let p = tape.mul(x, k).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[5.0, 6.0]);
        assert!(tape.grad(k).is_none());
    }
}
