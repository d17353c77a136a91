//! The network: a five-level image pyramid feeding five multi-rate atrous
//! blocks, whose adapted outputs are added to the stem and to each of four
//! stride-2 residual stages, followed by a fully connected head.

mod config;
mod layers;
mod model;
mod params;

pub use config::{MacNetConfig, BOTTLENECK_EXPANSION, PYRAMID_LEVELS, TOTAL_STRIDE};
pub use layers::{AtrousBlock, Bottleneck, ConvUnit, LinearUnit};
pub use model::{ForwardTrace, MacNet, Prediction};
pub use params::{he_normal, ForwardCtx, MomentsId, ParamId, ParamStore, Parameter};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Level `i` is the input average-pooled by `2^i`; level 0 is the input
/// itself.
pub fn build_pyramid<T: Real>(tape: &mut Tape<T>, image: Var) -> Result<[Var; PYRAMID_LEVELS]> {
    let (_, _, h, w) = tape.value(image).dims4()?;
    let coarsest = 1 << (PYRAMID_LEVELS - 1);
    if h % coarsest != 0 || w % coarsest != 0 {
        return Err(Error::dim(format!(
            "image pyramid needs extents divisible by {coarsest}, got {h}x{w}; pad to {}x{}",
            h.div_ceil(coarsest) * coarsest,
            w.div_ceil(coarsest) * coarsest
        )));
    }
    let mut levels = [image; PYRAMID_LEVELS];
    for (i, level) in levels.iter_mut().enumerate().skip(1) {
        *level = tape.downsample_avg(image, 1 << i)?;
    }
    Ok(levels)
}
