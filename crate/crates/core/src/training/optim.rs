//! Adadelta with global-norm gradient clipping.

use crate::data::{ArrayRole, NamedArray};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{ParamStore, Tensor};

use super::loss::LossConfig;

const ACC_GRAD: &str = "#acc_grad";
const ACC_UPDATE: &str = "#acc_update";

/// Running averages of squared gradients and squared updates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    acc_grad: Vec<Tensor>,
    acc_update: Vec<Tensor>,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Norm of the gradient actually fed to the accumulators.
    pub applied_norm: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        OptimizerState {
            acc_grad: zeros(),
            acc_update: zeros(),
            steps: 0,
        }
    }

    pub fn acc_grad(&self, index: usize) -> &Tensor {
        &self.acc_grad[index]
    }

    pub fn acc_update(&self, index: usize) -> &Tensor {
        &self.acc_update[index]
    }

    /// One in-place update from the gradients currently held in `store`.
    /// A NaN gradient aborts the step before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore, config: &LossConfig) -> Result<StepReport> {
        if self.acc_grad.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, store has {}",
                self.acc_grad.len(),
                store.len()
            )));
        }
        if let Some(p) = store.params().iter().find(|p| p.grad.data().iter().any(|g| g.is_nan())) {
            return Err(Error::NanGradient(p.name.clone()));
        }
        let grad_norm = store.grad_norm();
        let scale = if grad_norm > config.clip_threshold {
            config.clip_threshold / grad_norm
        } else {
            1.0
        };
        let (rho, eps) = (config.rho, config.epsilon);
        let mut applied = 0.0;
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let eg = self.acc_grad[i].data_mut();
            let ed = self.acc_update[i].data_mut();
            let value = p.value.data_mut();
            for (j, &g) in p.grad.data().iter().enumerate() {
                let g = g * scale;
                applied += g * g;
                eg[j] = rho * eg[j] + (1.0 - rho) * g * g;
                let delta = -((ed[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * g;
                ed[j] = rho * ed[j] + (1.0 - rho) * delta * delta;
                value[j] += delta;
            }
        }
        self.steps += 1;
        Ok(StepReport {
            grad_norm,
            applied_norm: applied.sqrt(),
        })
    }

    /// Accumulators as checkpoint records named `<param>#acc_grad` / `<param>#acc_update`.
    pub fn to_arrays(&self, store: &ParamStore) -> Vec<NamedArray> {
        let mut out = Vec::with_capacity(2 * store.len() + 1);
        for (i, p) in store.params().iter().enumerate() {
            for (suffix, t) in [(ACC_GRAD, &self.acc_grad[i]), (ACC_UPDATE, &self.acc_update[i])] {
                out.push(NamedArray {
                    name: format!("{}{suffix}", p.name),
                    role: ArrayRole::Buffer,
                    value: t.clone(),
                });
            }
        }
        out.push(NamedArray {
            name: "#steps".into(),
            role: ArrayRole::Buffer,
            value: Tensor::scalar(self.steps as f64),
        });
        out
    }

    pub fn from_arrays(store: &ParamStore, arrays: &[NamedArray]) -> Result<Self> {
        let find = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let a = arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| CheckpointError::Malformed(format!("optimizer record `{name}` missing")))?;
            if a.value.shape() != shape {
                return Err(CheckpointError::Malformed(format!("optimizer record `{name}` has wrong shape")).into());
            }
            Ok(a.value.clone())
        };
        let mut state = OptimizerState::new(store);
        for (i, p) in store.params().iter().enumerate() {
            state.acc_grad[i] = find(&format!("{}{ACC_GRAD}", p.name), p.value.shape())?;
            state.acc_update[i] = find(&format!("{}{ACC_UPDATE}", p.name), p.value.shape())?;
        }
        state.steps = find("#steps", &[])?.data()[0] as u64;
        Ok(state)
    }
}

/// Free-function form of [`OptimizerState::step`].
pub fn adadelta_step(store: &mut ParamStore, state: &mut OptimizerState, config: &LossConfig) -> Result<StepReport> {
    state.step(store, config)
}
