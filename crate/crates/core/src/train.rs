//! Single-clip loss/gradient evaluation, batched train steps and inference.

use alloc::vec::Vec;

use crate::augment::Batch;
use crate::error::{invalid, Result};
use crate::graph::Graph;
use crate::head::{self, PresenceMap};
use crate::model::HtsModel;
use crate::optim::OptimState;
use crate::real::Real;
use crate::tensor::Tensor;

/// BCE of one clip and its gradient with respect to every parameter, in
/// store order.
pub fn clip_loss_and_grads<T: Real>(model: &HtsModel<T>, spec: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let vars = model.params.attach(&mut g);
    let s = g.constant(spec.clone());
    let out = model.forward(&mut g, &vars, s)?;
    let loss = head::bce_loss(&mut g, out.clip, target)?;
    let value = g.value(loss).data()[0].to_f64();
    let mut grads = g.backward(loss)?;
    Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
}

/// BCE of one clip without building gradients.
pub fn clip_loss<T: Real>(model: &HtsModel<T>, spec: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let (mut g, _, out) = model.run(spec)?;
    let loss = head::bce_loss(&mut g, out.clip, target)?;
    Ok(g.value(loss).data()[0].to_f64())
}

/// Mean loss and gradient over per-clip results; gradients are summed in
/// the given order, then divided by their count.
pub fn average_clip_grads(parts: Vec<(f64, Vec<Tensor<f32>>)>) -> Result<(f64, Vec<Tensor<f32>>)> {
    let n = parts.len();
    let mut iter = parts.into_iter();
    let (mut total, mut acc) = iter.next().ok_or_else(|| invalid("train_step", "empty batch"))?;
    for (l, grads) in iter {
        total += l;
        for (x, y) in acc.iter_mut().zip(&grads) {
            for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                *p += *q;
            }
        }
    }
    let inv = 1.0 / n as f32;
    for t in acc.iter_mut() {
        for v in t.data_mut() {
            *v *= inv;
        }
    }
    Ok((total / n as f64, acc))
}

/// Mean BCE over the batch and its gradients, clip by clip in batch order.
pub fn batch_loss_and_grads(model: &HtsModel<f32>, batch: &Batch) -> Result<(f64, Vec<Tensor<f32>>)> {
    let parts = (0..batch.size())
        .map(|i| clip_loss_and_grads(model, &batch.spec(i), &batch.target(i)))
        .collect::<Result<Vec<_>>>()?;
    average_clip_grads(parts)
}

/// Mean BCE over the batch.
pub fn batch_loss(model: &HtsModel<f32>, batch: &Batch) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..batch.size() {
        total += clip_loss(model, &batch.spec(i), &batch.target(i))?;
    }
    Ok(total / batch.size() as f64)
}

/// One optimizer step on a batch; returns the pre-step mean loss.
pub fn train_step(model: &mut HtsModel<f32>, opt: &mut OptimState, batch: &Batch, lr: f64) -> Result<f64> {
    let (loss, grads) = batch_loss_and_grads(model, batch)?;
    opt.step(&mut model.params, &grads, lr)?;
    Ok(loss)
}

/// Clip probabilities and presence map of one spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub clip: Vec<f32>,
    pub presence: PresenceMap,
}

pub fn predict<T: Real>(model: &HtsModel<T>, spec: &Tensor<T>) -> Result<Prediction> {
    let (g, _, out) = model.run(spec)?;
    let clip = g.value(out.clip).data().iter().map(|v| v.to_f64() as f32).collect();
    let presence = PresenceMap::from_tensor(g.value(out.presence))?;
    Ok(Prediction { clip, presence })
}
