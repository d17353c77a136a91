use crate::arch::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Step decay: `base_lr * gamma^floor(epoch / step_size_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub step_size_epochs: usize,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 0.001,
            step_size_epochs: 20,
            gamma: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return Err(Error::config(format!(
                "base learning rate must be finite and non-negative, got {}",
                self.base_lr
            )));
        }
        if self.step_size_epochs == 0 {
            return Err(Error::config("learning-rate step must be at least one epoch"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("learning-rate gamma must be in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.gamma.powi((epoch / self.step_size_epochs) as i32)
    }
}

/// SGD with classical momentum and L2 weight decay folded into the
/// gradient: `g' = g + wd p`, `v = mu v + g'`, `p = p - lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub current_lr: f64,
    velocities: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    /// Zero velocities shaped like the parameters of `store`.
    pub fn new(store: &ParamStore<T>, momentum: f64, weight_decay: f64, lr: f64) -> Self {
        let velocities = store.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Sgd {
            momentum,
            weight_decay,
            current_lr: lr,
            velocities,
        }
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocities
    }

    /// Replaces the velocities; shapes must mirror the parameters.
    pub fn set_velocities(&mut self, store: &ParamStore<T>, velocities: Vec<Tensor<T>>) -> Result<()> {
        if velocities.len() != store.params().len() || velocities.iter().zip(store.params()).any(|(v, p)| v.shape() != p.value.shape()) {
            return Err(Error::Checkpoint("velocity shapes do not mirror the parameters".into()));
        }
        self.velocities = velocities;
        Ok(())
    }

    /// Updates every parameter from its gradient and clears the gradients.
    /// Nothing is modified when a gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = store.params().iter().find(|p| p.grad.is_none()) {
            return Err(Error::contract(format!("parameter `{}` has no gradient", p.name)));
        }
        if self.velocities.len() != store.params().len() {
            return Err(Error::contract("optimizer was built for a different parameter set"));
        }
        let (mu, wd, lr) = (T::lit(self.momentum), T::lit(self.weight_decay), T::lit(self.current_lr));
        for (p, v) in store.params_mut().iter_mut().zip(&mut self.velocities) {
            let grad = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            for ((pv, vv), &g) in values.iter_mut().zip(v.data_mut()).zip(grad.data()) {
                *vv = mu * *vv + (g + wd * *pv);
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}
