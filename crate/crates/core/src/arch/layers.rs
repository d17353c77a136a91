use super::params::{ForwardCtx, MomentsId, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::{Conv2dSpec, RunningMoments};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
struct BatchNormUnit {
    gamma: ParamId,
    beta: ParamId,
    moments: MomentsId,
}

/// Convolution, optionally followed by batch norm and ReLU. The conv has a
/// bias only when no batch norm follows it.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    weight: ParamId,
    bias: Option<ParamId>,
    bn: Option<BatchNormUnit>,
    relu: bool,
    spec: Conv2dSpec,
}

impl ConvUnit {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        spec: Conv2dSpec,
        batch_norm: Option<f64>,
        relu: bool,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        let fan_in = spec.in_channels * kh * kw;
        let weight = store.add_he_normal(
            format!("{name}.weight"),
            vec![spec.out_channels, spec.in_channels, kh, kw],
            fan_in,
            rng,
        );
        let (bias, bn) = match batch_norm {
            Some(momentum) => {
                let c = spec.out_channels;
                let gamma = store.add(format!("{name}.bn.gamma"), Tensor::full(vec![c], T::one()));
                let beta = store.add(format!("{name}.bn.beta"), Tensor::zeros(vec![c]));
                let moments = store.add_moments(format!("{name}.bn"), RunningMoments::with_momentum(c, momentum));
                (None, Some(BatchNormUnit { gamma, beta, moments }))
            }
            None => (
                Some(store.add(format!("{name}.bias"), Tensor::zeros(vec![spec.out_channels]))),
                None,
            ),
        };
        ConvUnit {
            weight,
            bias,
            bn,
            relu,
            spec,
        }
    }

    pub fn spec(&self) -> &Conv2dSpec {
        &self.spec
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward<T: Real>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        let mut y = ctx.tape.conv2d(x, w, b, &self.spec)?;
        if let Some(bn) = &self.bn {
            let (gamma, beta) = (ctx.param(bn.gamma), ctx.param(bn.beta));
            y = ctx.batch_norm(y, gamma, beta, bn.moments)?;
        }
        if self.relu {
            y = ctx.tape.relu(y);
        }
        Ok(y)
    }
}

/// Parallel dilated 3x3 convolutions, one branch per rate, concatenated
/// along channels. Spatial extents are preserved.
#[derive(Debug, Clone)]
pub struct AtrousBlock {
    in_channels: usize,
    branch_width: usize,
    branches: Vec<(usize, ConvUnit)>,
}

impl AtrousBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        in_channels: usize,
        branch_width: usize,
        rates: &[usize],
        batch_norm: Option<f64>,
    ) -> Self {
        let branches = rates
            .iter()
            .map(|&rate| {
                let spec = Conv2dSpec::same(in_channels, branch_width, 3, rate);
                (
                    rate,
                    ConvUnit::new(store, rng, &format!("{name}.rate{rate}"), spec, batch_norm, true),
                )
            })
            .collect();
        AtrousBlock {
            in_channels,
            branch_width,
            branches,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.branch_width * self.branches.len()
    }

    pub fn rates(&self) -> Vec<usize> {
        self.branches.iter().map(|(r, _)| *r).collect()
    }

    pub fn forward<T: Real>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::dim(format!(
                "atrous block expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let outs = self
            .branches
            .iter()
            .map(|(_, unit)| unit.forward(ctx, x))
            .collect::<Result<Vec<_>>>()?;
        ctx.tape.concat_channels(&outs)
    }
}

/// 1x1 reduce, 3x3 (carrying the stride), 1x1 expand, plus an identity or
/// projection shortcut, followed by ReLU.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    reduce: ConvUnit,
    spatial: ConvUnit,
    expand: ConvUnit,
    shortcut: Option<ConvUnit>,
}

impl Bottleneck {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        batch_norm: Option<f64>,
    ) -> Self {
        let mid = out_channels / super::config::BOTTLENECK_EXPANSION;
        let reduce = ConvUnit::new(
            store,
            rng,
            &format!("{name}.reduce"),
            Conv2dSpec::pointwise(in_channels, mid),
            batch_norm,
            true,
        );
        let spatial = ConvUnit::new(
            store,
            rng,
            &format!("{name}.conv3x3"),
            Conv2dSpec::new(mid, mid, (3, 3)).with_stride(stride).with_padding(1),
            batch_norm,
            true,
        );
        let expand = ConvUnit::new(
            store,
            rng,
            &format!("{name}.expand"),
            Conv2dSpec::pointwise(mid, out_channels),
            batch_norm,
            false,
        );
        let shortcut = (stride != 1 || in_channels != out_channels).then(|| {
            ConvUnit::new(
                store,
                rng,
                &format!("{name}.shortcut"),
                Conv2dSpec::pointwise(in_channels, out_channels).with_stride(stride),
                batch_norm,
                false,
            )
        });
        Bottleneck {
            reduce,
            spatial,
            expand,
            shortcut,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let h = self.reduce.forward(ctx, x)?;
        let h = self.spatial.forward(ctx, h)?;
        let h = self.expand.forward(ctx, h)?;
        let skip = match &self.shortcut {
            Some(unit) => unit.forward(ctx, x)?,
            None => x,
        };
        let sum = ctx.tape.add(h, skip)?;
        Ok(ctx.tape.relu(sum))
    }
}

#[derive(Debug, Clone)]
pub struct LinearUnit {
    weight: ParamId,
    bias: ParamId,
}

impl LinearUnit {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, input: usize, output: usize) -> Self {
        let weight = store.add_he_normal(format!("{name}.weight"), vec![input, output], input, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![output]));
        LinearUnit { weight, bias }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward<T: Real>(&self, ctx: &mut ForwardCtx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.weight), ctx.param(self.bias));
        ctx.tape.linear(x, w, Some(b))
    }
}
