//! AdamW with a step-decay learning-rate schedule.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelParameters;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient for layer {layer} has shape {got:?}, expected {expected:?}")]
    Shape { layer: usize, got: (usize, usize), expected: (usize, usize) },
    #[error("non-finite gradient in layer {layer} ({part}), first bad index {index}")]
    NonFinite { layer: usize, part: &'static str, index: usize },
    #[error("expected {expected} gradient layers, got {got}")]
    LayerCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            decay_factor: 0.1,
            decay_every: 300,
        }
    }
}

impl AdamWConfig {
    /// Scheduled learning rate for a zero-based epoch index.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// Gradient per layer, shaped like the layer's `(weight, bias)`.
pub type LayerGrads = Vec<(Array2<f64>, Array2<f64>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub lr: f64,
    pub step: u64,
    /// First and second moments, laid out like the parameters.
    pub m: LayerGrads,
    pub v: LayerGrads,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &ModelParameters) -> Self {
        let zeros: LayerGrads = params
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weight.raw_dim()), Array2::zeros(l.bias.raw_dim())))
            .collect();
        Self { config, lr: config.lr, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.config.lr_at_epoch(epoch);
    }
}

/// One decoupled-weight-decay Adam update:
/// `theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut ModelParameters,
    grads: &LayerGrads,
) -> Result<(), OptimError> {
    if grads.len() != params.layers.len() {
        return Err(OptimError::LayerCount { expected: params.layers.len(), got: grads.len() });
    }
    for (layer, ((gw, gb), l)) in grads.iter().zip(&params.layers).enumerate() {
        for (g, p, part) in [(gw, &l.weight, "weight"), (gb, &l.bias, "bias")] {
            if g.dim() != p.dim() {
                return Err(OptimError::Shape { layer, got: g.dim(), expected: p.dim() });
            }
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(OptimError::NonFinite { layer, part, index });
            }
        }
    }

    state.step += 1;
    let c = state.config;
    let lr = state.lr;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    let decay = 1.0 - lr * c.weight_decay;

    for (i, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads[i];
        let (mw, mb) = &mut state.m[i];
        let (vw, vb) = &mut state.v[i];
        for (p, g, m, v) in [(&mut layer.weight, gw, mw, vw), (&mut layer.bias, gb, mb, vb)] {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
            });
        }
    }
    Ok(())
}
