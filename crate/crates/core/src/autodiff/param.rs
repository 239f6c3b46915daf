//! Named trainable parameters with accumulated gradients and Adam state.
//!
//! Parameters live in a store separate from the tape so that one set of
//! weights can flow through many short-lived tapes per iteration (the
//! discriminator step, the per-class steps, and the generator step each build
//! their own graph). Freezing is a store-level flag: backward skips gradient
//! accumulation for frozen parameters, which is what makes the alternating
//! minimax updates correct.

use serde::{Deserialize, Serialize};

use super::mat::Mat;
use crate::error::{DirlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Mat,
    pub grad: Mat,
    /// Adam first/second moment estimates and the bias-correction step count.
    m: Mat,
    v: Mat,
    steps: u64,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let (r, c) = (value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: Mat::zeros(r, c),
            m: Mat::zeros(r, c),
            v: Mat::zeros(r, c),
            steps: 0,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.params[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, ids: &[ParamId], trainable: bool) {
        for id in ids {
            self.params[id.0].trainable = trainable;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn zero_grad(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.params[id.0].grad.fill(0.0);
        }
    }

    pub fn zero_all_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Mat) -> Result<()> {
        self.params[id.0].grad.add_assign(delta)
    }

    /// Frobenius norms per parameter, used in abort diagnostics.
    pub fn norm_summary(&self) -> String {
        self.params
            .iter()
            .map(|p| format!("{}={:.3e}", p.name, p.value.frobenius_norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DirlError::Config(format!("adam lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(DirlError::Config(format!("adam {name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(DirlError::Config(format!("adam eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update on the listed parameters.
///
/// Each parameter carries its own step counter, so a parameter that sat out
/// some iterations (a frozen head, or a class discriminator whose class was
/// absent from a batch) still gets correct bias correction when it next moves.
/// Gradients of the stepped parameters are zeroed afterwards; everything else
/// is left untouched.
pub fn adam_step(store: &mut ParamStore, ids: &[ParamId], cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    for id in ids {
        let p = &mut store.params[id.0];
        p.steps += 1;
        let bc1 = 1.0 - cfg.beta1.powi(p.steps as i32);
        let bc2 = 1.0 - cfg.beta2.powi(p.steps as i32);
        for i in 0..p.value.data().len() {
            let g = p.grad.data()[i];
            if !g.is_finite() {
                return Err(DirlError::NonFinite { op: "adam_step" });
            }
            let m = cfg.beta1 * p.m.data()[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.v.data()[i] + (1.0 - cfg.beta2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            p.value.data_mut()[i] -= update;
        }
        p.grad.fill(0.0);
    }
    Ok(())
}
