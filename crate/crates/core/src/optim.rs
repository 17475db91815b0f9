//! Adam updates and the plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::to_f32_grid;
use crate::nn::{ParamGrads, ParamSet};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Minimum decrease that counts as an improvement of the monitored loss.
pub const PLATEAU_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self { step: 0, m: params.zero_grads(), v: params.zero_grads() }
    }
}

/// One bias-corrected Adam update. Updated values are rounded to the f32
/// grid the weight files store.
pub fn adam_step(params: &mut ParamSet, grads: &ParamGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(format!("{} tensors", params.len()), grads.len()));
    }
    for (t, g) in params.tensors().iter().zip(grads) {
        if g.len() != t.data.len() {
            return Err(Error::shape(format!("{} values in `{}`", t.data.len(), t.name), g.len()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", t.name)));
        }
    }
    state.step += 1;
    let b1t = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let b2t = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (k, t) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads[k]);
        for i in 0..t.data.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mhat = m[i] / b1t;
            let vhat = v[i] / b2t;
            t.data[i] = to_f32_grid(t.data[i] - lr * mhat / (vhat.sqrt() + ADAM_EPS));
        }
    }
    Ok(())
}

/// Divides the rate by `factor` once the best loss has gone `patience`
/// epochs without a strict improvement, then restarts the count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, best: f64::INFINITY, stale: 0 }
    }

    /// Records an epoch loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - PLATEAU_TOL {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr /= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Rate after replaying `losses` through a fresh scheduler.
pub fn lr_schedule(losses: &[f64], initial_lr: f64, factor: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(initial_lr, factor, patience);
    losses.iter().fold(initial_lr, |_, &l| s.observe(l))
}
