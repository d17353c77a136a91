use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{Mode, NormMode, RunningMoments};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentsId(pub(crate) usize);

/// Trainable parameters plus the non-trainable running moments of every
/// batch-norm layer, both kept in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    moments: Vec<(String, RunningMoments<T>)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            moments: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn from `N(0, 2 / fan_in)`.
    pub fn add_he_normal(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> ParamId {
        self.add(name, he_normal(shape, fan_in, rng))
    }

    pub fn add_moments(&mut self, name: impl Into<String>, moments: RunningMoments<T>) -> MomentsId {
        self.moments.push((name.into(), moments));
        MomentsId(self.moments.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn moments(&self) -> &[(String, RunningMoments<T>)] {
        &self.moments
    }

    pub fn moments_mut(&mut self) -> &mut [(String, RunningMoments<T>)] {
        &mut self.moments
    }

    pub fn find(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the tape gradients of `bound` (one var per parameter, as
    /// returned by [`ForwardCtx::finish`]) into each parameter's gradient.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &[Var]) -> Result<()> {
        if bound.len() != self.params.len() {
            return Err(Error::contract(format!(
                "{} bound vars for {} parameters",
                bound.len(),
                self.params.len()
            )));
        }
        for (p, &var) in self.params.iter_mut().zip(bound) {
            let Some(g) = tape.grad(var) else { continue };
            match &mut p.grad {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                        *e += *v;
                    }
                }
                None => p.grad = Some(g),
            }
        }
        Ok(())
    }
}

pub fn he_normal<T: Real>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

enum MomentsAccess<'a, T> {
    Train(&'a mut [(String, RunningMoments<T>)]),
    Eval(&'a [(String, RunningMoments<T>)]),
}

/// Everything a layer needs during one forward pass: the tape, the tape
/// handles of every parameter, batch-norm state and the dropout stream.
pub struct ForwardCtx<'a, T> {
    pub tape: &'a mut Tape<T>,
    vars: Vec<Var>,
    moments: MomentsAccess<'a, T>,
    rng: Option<&'a mut Rng>,
}

impl<'a, T: Real> ForwardCtx<'a, T> {
    /// Train-mode pass: parameters track gradients, batch norm uses batch
    /// statistics and updates running moments, dropout draws from `rng`.
    pub fn train(tape: &'a mut Tape<T>, store: &'a mut ParamStore<T>, rng: Option<&'a mut Rng>) -> Self {
        let vars = store.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect();
        ForwardCtx {
            tape,
            vars,
            moments: MomentsAccess::Train(&mut store.moments),
            rng,
        }
    }

    /// Eval-mode pass. `track_grads` keeps parameters differentiable (for
    /// gradient checks of eval-mode behaviour).
    pub fn eval(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, track_grads: bool) -> Self {
        let vars = store.params.iter().map(|p| tape.leaf(p.value.clone(), track_grads)).collect();
        ForwardCtx {
            tape,
            vars,
            moments: MomentsAccess::Eval(&store.moments),
            rng: None,
        }
    }

    pub fn mode(&self) -> Mode {
        match self.moments {
            MomentsAccess::Train(_) => Mode::Train,
            MomentsAccess::Eval(_) => Mode::Eval,
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Tape handle of every parameter, in store order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub(crate) fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, id: MomentsId) -> Result<Var> {
        let mode = match &mut self.moments {
            MomentsAccess::Train(m) => NormMode::Train(&mut m[id.0].1),
            MomentsAccess::Eval(m) => NormMode::Eval(&m[id.0].1),
        };
        self.tape.batch_norm(x, gamma, beta, mode)
    }

    pub(crate) fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let mode = self.mode();
        if mode == Mode::Eval || p == 0.0 {
            return self.tape.dropout(x, p, Mode::Eval, &mut rand::rng());
        }
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::contract("train-mode dropout needs a random stream"))?;
        self.tape.dropout(x, p, mode, rng)
    }

    /// Fails with a numeric fault naming `layer` when `var` holds a
    /// non-finite value.
    pub fn check_finite(&self, var: Var, layer: &str) -> Result<()> {
        if self.tape.value(var).is_finite() {
            Ok(())
        } else {
            Err(Error::NumericFault { layer: layer.to_string() })
        }
    }

    /// Ends the pass and returns the tape handle of every parameter.
    pub fn finish(self) -> Vec<Var> {
        self.vars
    }
}
