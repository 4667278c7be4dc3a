//! Token-semantic head: a `(3, F/8P)` convolution with `(1, 0)` padding maps
//! final tokens to per-class presence logits; the clip prediction is the
//! time-mean of the sigmoid presence map.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, mismatch, Result};
use crate::graph::{sigmoid, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Probability clamp used inside the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Per-time-step, per-class event activation in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceMap {
    pub steps: usize,
    pub classes: usize,
    /// `steps × classes`, row-major.
    pub values: Vec<f32>,
}

impl PresenceMap {
    pub fn new(steps: usize, classes: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != steps * classes {
            return Err(mismatch("presence_map", &[steps, classes], &[values.len()]));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("presence_map", "values must lie in [0, 1]"));
        }
        Ok(Self { steps, classes, values })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        if t.rank() != 2 {
            return Err(mismatch("presence_map", t.shape(), &[0, 0]));
        }
        Self::new(t.shape()[0], t.shape()[1], t.data().iter().map(|v| v.to_f64() as f32).collect())
    }

    pub fn at(&self, step: usize, class: usize) -> f32 {
        self.values[step * self.classes + class]
    }

    /// Time series of one class.
    pub fn class_series(&self, class: usize) -> Vec<f32> {
        (0..self.steps).map(|t| self.at(t, class)).collect()
    }
}

/// `x[T', F', 8D]` (time-major) with `w[C, 8D, 3, F']`, `b[C]` → logits
/// `[T', C]`.
pub fn ts_conv<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (sx, sw) = (g.shape(x).to_vec(), g.shape(w).to_vec());
    if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[2] || sw[2] != 3 || sw[3] != sx[1] {
        return Err(mismatch("ts_conv", &sx, &sw));
    }
    let y = g.conv2d(x, w, b, (1, 1), (1, 0))?;
    g.reshape(y, &[sx[0], sw[0]])
}

/// Sigmoid-then-mean pooling: presence `[T', C]` → clip probabilities `[C]`.
pub fn pool_clip<T: Real>(g: &mut Graph<T>, presence: Var) -> Result<Var> {
    if g.shape(presence).len() != 2 {
        return Err(mismatch("pool_clip", g.shape(presence), &[0, 0]));
    }
    g.mean_axis(presence, 0)
}

/// Plain-value clip pooling of a presence map.
pub fn pool_clip_values(map: &PresenceMap) -> Vec<f32> {
    (0..map.classes)
        .map(|c| {
            let mut acc = 0.0f64;
            for t in 0..map.steps {
                acc += map.at(t, c) as f64;
            }
            (acc / map.steps as f64) as f32
        })
        .collect()
}

fn check_targets<T: Real>(target: &Tensor<T>) -> Result<()> {
    if target.data().iter().any(|&y| !(y >= T::ZERO && y <= T::ONE)) {
        return Err(invalid("bce_loss", "targets must lie in [0, 1]"));
    }
    Ok(())
}

/// Mean over classes of `−[y ln p + (1−y) ln(1−p)]` with `p` clamped to
/// `[ε, 1−ε]`.
pub fn bce_loss<T: Real>(g: &mut Graph<T>, probs: Var, target: &Tensor<T>) -> Result<Var> {
    if g.shape(probs) != target.shape() {
        return Err(mismatch("bce_loss", g.shape(probs), target.shape()));
    }
    check_targets(target)?;
    let eps = T::from_f64(BCE_EPS);
    let p = g.clamp(probs, eps, T::ONE - eps);
    let y = g.constant(target.clone());
    let not_y = g.constant(target.map(|v| T::ONE - v));
    let log_p = g.log(p);
    let one_minus_p = g.affine(p, -T::ONE, T::ONE);
    let log_q = g.log(one_minus_p);
    let a = g.mul(y, log_p)?;
    let b = g.mul(not_y, log_q)?;
    let s = g.add(a, b)?;
    let m = g.mean_all(s);
    Ok(g.scale(m, -T::ONE))
}

/// Plain-value BCE with the same clamp, for evaluation.
pub fn bce_value(probs: &[f64], target: &[f64]) -> Result<f64> {
    if probs.len() != target.len() || probs.is_empty() {
        return Err(mismatch("bce_loss", &[probs.len()], &[target.len()]));
    }
    let mut acc = 0.0;
    for (&p, &y) in probs.iter().zip(target) {
        if !(0.0..=1.0).contains(&y) {
            return Err(invalid("bce_loss", "targets must lie in [0, 1]"));
        }
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        acc += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-acc / probs.len() as f64)
}

/// Nearest-neighbour upsampling of the presence map along time by `factor`.
pub fn interpolate_map(map: &PresenceMap, factor: usize) -> Result<PresenceMap> {
    if factor == 0 {
        return Err(invalid("interpolate_map", "factor must be positive"));
    }
    let mut values = Vec::with_capacity(map.values.len() * factor);
    for t in 0..map.steps {
        let row = &map.values[t * map.classes..(t + 1) * map.classes];
        for _ in 0..factor {
            values.extend_from_slice(row);
        }
    }
    PresenceMap::new(map.steps * factor, map.classes, values)
}

/// Upsamples to `frames` frames; `frames` must be a multiple of the step count.
pub fn interpolate_to_frames(map: &PresenceMap, frames: usize) -> Result<PresenceMap> {
    if map.steps == 0 || !frames.is_multiple_of(map.steps) {
        return Err(invalid(
            "interpolate_map",
            format!("{frames} frames is not an integer multiple of {} steps", map.steps),
        ));
    }
    interpolate_map(map, frames / map.steps)
}

/// Sigmoid of logits as plain values.
pub fn sigmoid_values<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(sigmoid)
}
