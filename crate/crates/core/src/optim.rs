//! AdamW with decoupled weight decay, the epoch learning-rate schedule,
//! checkpoint weight averaging and seed ensembling.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, mismatch, Error, Result};
use crate::model::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    /// Zero moments sized like `params`, default hyperparameters.
    pub fn new<T: Real>(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| alloc::vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// One AdamW update. Decay `θ ← θ·(1 − lr·λ)` precedes the Adam step.
    /// Non-finite gradients leave params and state untouched.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(mismatch("adamw_step", &[params.len()], &[grads.len()]));
        }
        if !(lr > 0.0) {
            return Err(invalid("adamw_step", "learning rate must be positive"));
        }
        for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(mismatch("adamw_step", p.shape(), g.shape()));
            }
            if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {} ({}) is non-finite at element {j}",
                    i,
                    params.name(crate::model::ParamId(i))
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let shrink = 1.0 - lr * self.weight_decay;
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j].to_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let x = w.to_f64() * shrink - lr * mhat / (libm::sqrt(vhat) + self.eps);
                *w = T::from_f64(x);
            }
        }
        Ok(())
    }
}

/// Warm-up then step-decay schedule expressed as factors of `base_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 1e-3 }
    }
}

pub const WARMUP_FACTORS: [f64; 3] = [0.05, 0.1, 0.2];
pub const HALVING_PERIOD: usize = 10;
pub const FLOOR_FACTOR: f64 = 0.05;

/// Epochs are 1-based: 1, 2, 3 → 0.05, 0.1, 0.2; afterwards
/// `max(0.05, 0.2 · 2^-⌊(epoch−3)/10⌋)`. Epoch 0 is treated as epoch 1.
pub fn lr_factor(epoch: usize) -> f64 {
    let e = epoch.max(1);
    if e <= 3 {
        return WARMUP_FACTORS[e - 1];
    }
    let halvings = ((e - 3) / HALVING_PERIOD).min(64) as i32;
    (WARMUP_FACTORS[2] * libm::pow(2.0, -(halvings as f64))).max(FLOOR_FACTOR)
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * lr_factor(epoch)
    }
}

/// Elementwise mean of parameter sets (accumulated in f64, in input order).
pub fn weight_average<T: Real>(checkpoints: &[ParamStore<T>]) -> Result<ParamStore<T>> {
    let first = checkpoints
        .first()
        .ok_or_else(|| invalid("weight_average", "need at least one checkpoint"))?;
    for c in &checkpoints[1..] {
        first.check_compatible(c)?;
    }
    let k = checkpoints.len() as f64;
    let mut out = first.clone();
    for (i, t) in out.tensors_mut().iter_mut().enumerate() {
        for (j, w) in t.data_mut().iter_mut().enumerate() {
            let s: f64 = checkpoints.iter().map(|c| c.tensors()[i].data()[j].to_f64()).sum();
            *w = T::from_f64(s / k);
        }
    }
    Ok(out)
}

/// Mean of per-model probability sets of equal length.
pub fn ensemble_mean(members: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = members
        .first()
        .ok_or_else(|| invalid("ensemble_mean", "need at least one member"))?;
    if let Some(m) = members.iter().find(|m| m.len() != first.len()) {
        return Err(mismatch("ensemble_mean", &[first.len()], &[m.len()]));
    }
    let k = members.len() as f64;
    Ok((0..first.len())
        .map(|j| (members.iter().map(|m| m[j] as f64).sum::<f64>() / k) as f32)
        .collect())
}
