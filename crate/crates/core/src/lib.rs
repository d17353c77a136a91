//! MACNet: a multi-scale atrous convolution network for classifying food
//! places in egocentric photo-streams, built on a small reverse-mode
//! autograd engine.
//!
//! Module map:
//! - [`tensor`], [`autograd`], [`ops`]: values, the tape and the operator set.
//! - [`arch`]: the network (image pyramid, atrous blocks, residual stages, head).
//! - [`loss`], [`metrics`]: class-weighted cross-entropy and evaluation statistics.
//! - [`data`]: manifests, event-aware splitting, augmentation, image IO, synthetic data.
//! - [`train`]: SGD with momentum, the step schedule, the epoch loop and checkpoints.
//! - [`report`]: CSV/SVG renderings of evaluation reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arch;
pub mod autograd;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod ops;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
