//! Differentiable operators. Each one is a method on
//! [`Tape`](crate::autograd::Tape) that computes
//! its forward value eagerly and records what the backward pass needs.

mod activation;
mod conv;
mod elementwise;
mod linear;
mod nll;
mod norm;
mod pool;

use crate::autograd::{Node, Op, Var};
use crate::error::Result;
use crate::tensor::Real;

pub use activation::softmax_forward;
pub use conv::{conv2d_direct, conv2d_forward, Conv2dSpec};
pub use linear::linear_forward;
pub(crate) use nll::weighted_nll_value;
pub use nll::{LOG_CLAMP, ROW_SUM_TOLERANCE};
pub use norm::{NormMode, RunningMoments, BN_EPS, DEFAULT_BN_MOMENTUM};
pub use pool::downsample_avg_forward;

/// Train or eval behaviour for mode-dependent layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Eval => "eval",
        }
    }
}

type Grads<T> = Vec<(Var, Vec<T>)>;

pub(crate) fn backward_op<T: Real>(nodes: &[Node<T>], index: usize, grad: &[T]) -> Result<Grads<T>> {
    let node = &nodes[index];
    let needs = |v: Var| nodes[v.0].requires_grad;
    let value = |v: Var| &nodes[v.0].value;
    let out = &node.value;
    let grads = match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => elementwise::add_backward(*a, *b, grad, needs),
        Op::Mul(a, b) => elementwise::mul_backward(*a, *b, value(*a), value(*b), grad, needs),
        Op::Scale(a, k) => vec![(*a, grad.iter().map(|&g| g * *k).collect())],
        Op::Sum(a) => vec![(*a, vec![grad[0]; value(*a).numel()])],
        Op::Relu(a) => vec![(*a, activation::relu_backward(value(*a), grad))],
        Op::Softmax(a) => vec![(*a, activation::softmax_backward(out, grad))],
        Op::Dropout { input, mask } => {
            vec![(*input, grad.iter().zip(mask).map(|(&g, &m)| g * m).collect())]
        }
        Op::Conv2d { input, weight, bias, spec } => {
            conv::conv2d_backward(*input, *weight, *bias, spec, value(*input), value(*weight), grad, needs)?
        }
        Op::Linear { input, weight, bias } => linear::linear_backward(*input, *weight, *bias, value(*input), value(*weight), grad, needs)?,
        Op::BatchNorm {
            input,
            gamma,
            beta,
            x_hat,
            inv_std,
            batch_stats,
        } => norm::batch_norm_backward(
            (*input, *gamma, *beta),
            value(*input),
            value(*gamma),
            x_hat,
            inv_std,
            *batch_stats,
            grad,
            needs,
        )?,
        Op::Downsample { input, factor } => {
            vec![(*input, pool::downsample_backward(value(*input), *factor, grad)?)]
        }
        Op::GlobalAvgPool(a) => vec![(*a, pool::global_avg_pool_backward(value(*a), grad)?)],
        Op::ConcatChannels(parts) => {
            let shapes: Vec<&[usize]> = parts.iter().map(|p| value(*p).shape()).collect();
            elementwise::concat_backward(parts, &shapes, grad, needs)
        }
        Op::WeightedNll { probs, labels, weights } => {
            vec![(*probs, nll::weighted_nll_backward(value(*probs), labels, weights, grad[0]))]
        }
    };
    Ok(grads.into_iter().filter(|(v, _)| needs(*v)).collect())
}
