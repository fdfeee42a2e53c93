use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 3,
            epochs: 20,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(
                "lr",
                format!("{} must be finite and non-negative", self.lr),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Gradients indexed like the parameter store; `None` counts as zero.
pub type Grads = Vec<Option<Tensor>>;

/// Momentum buffers, one per parameter (empty for non-learnable ones).
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity {
    buffers: Vec<Vec<f64>>,
}

impl Velocity {
    pub fn new(store: &ParamStore) -> Self {
        Velocity {
            buffers: store
                .iter()
                .map(|p| {
                    if p.kind.learnable() {
                        vec![0.0; p.value.numel()]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
        }
    }

    pub fn buffer(&self, index: usize) -> &[f64] {
        &self.buffers[index]
    }

    pub fn buffer_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.buffers[index]
    }
}

/// Classic momentum with coupled weight decay on decaying parameters:
/// `v = momentum * v + g + wd * w`, `w = w - lr * v`. Gradients are zeroed
/// afterwards. A non-finite gradient rejects the whole step and leaves the
/// parameters, velocity and gradients untouched.
pub fn sgd_step(store: &mut ParamStore, velocity: &mut Velocity, grads: &mut Grads, cfg: &SgdConfig) -> Result<()> {
    if grads.len() != store.len() || velocity.buffers.len() != store.len() {
        return Err(Error::arg(
            "grads",
            format!("{} gradients for {} parameters", grads.len(), store.len()),
        ));
    }
    for (p, g) in store.iter().zip(grads.iter()) {
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: p.value.shape().clone(),
                    right: g.shape().clone(),
                });
            }
            if p.kind.learnable() && !g.is_finite() {
                log::warn!("rejected SGD step: non-finite gradient for {}", p.name);
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
    }
    let ids: Vec<_> = (0..store.len()).collect();
    for i in ids {
        let id = crate::nn::ParamId(i);
        let param = store.get(id);
        if !param.kind.learnable() {
            continue;
        }
        let wd = if param.kind.decays() { cfg.weight_decay } else { 0.0 };
        let v = &mut velocity.buffers[i];
        let w = param.value.data();
        let g = grads[i].as_ref().map(Tensor::data);
        let mut next = Vec::with_capacity(w.len());
        for j in 0..w.len() {
            let gj = g.map_or(0.0, |g| g[j]);
            v[j] = cfg.momentum * v[j] + gj + wd * w[j];
            next.push(w[j] - cfg.lr * v[j]);
        }
        let updated = Tensor::from_shape(param.value.shape().clone(), next)?;
        store.set(id, updated)?;
    }
    for t in grads.iter_mut().flatten() {
        *t = Tensor::from_shape(t.shape().clone(), vec![0.0; t.numel()])?;
    }
    Ok(())
}
