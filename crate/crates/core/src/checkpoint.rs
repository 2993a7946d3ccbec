//! JSON model checkpoints: architecture, seeds, flattened layers and the
//! optimizer moments.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Architecture, Layer, ModelError, ModelParameters};
use crate::optim::{AdamWConfig, LayerGrads, OptimizerState};
use crate::training::Strategy;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint format_version {0}")]
    Version(u32),
    #[error("layer {layer}: {reason}")]
    Layer { layer: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One `out x in` weight matrix (row-major) and its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerRecord {
    fn from_arrays(w: &Array2<f64>, b: &Array2<f64>) -> Self {
        Self { rows: w.nrows(), cols: w.ncols(), weight: w.iter().copied().collect(), bias: b.iter().copied().collect() }
    }

    fn to_arrays(&self, layer: usize) -> Result<(Array2<f64>, Array2<f64>), CheckpointError> {
        let bad = |reason: String| CheckpointError::Layer { layer, reason };
        let w = Array2::from_shape_vec((self.rows, self.cols), self.weight.clone())
            .map_err(|_| bad(format!("{} weights for a {}x{} matrix", self.weight.len(), self.rows, self.cols)))?;
        let b = Array2::from_shape_vec((1, self.rows), self.bias.clone())
            .map_err(|_| bad(format!("{} biases for {} outputs", self.bias.len(), self.rows)))?;
        Ok((w, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub config: AdamWConfig,
    pub lr: f64,
    pub step: u64,
    pub m: Vec<LayerRecord>,
    pub v: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub strategy: Strategy,
    pub integration_steps: usize,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub layers: Vec<LayerRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

fn records(grads: &LayerGrads) -> Vec<LayerRecord> {
    grads.iter().map(|(w, b)| LayerRecord::from_arrays(w, b)).collect()
}

impl Checkpoint {
    pub fn new(
        params: &ModelParameters,
        strategy: Strategy,
        integration_steps: usize,
        seed: u64,
        epoch: usize,
        optimizer: Option<&OptimizerState>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            architecture: params.architecture,
            strategy,
            integration_steps,
            seed,
            epoch,
            layers: params.layers.iter().map(|l| LayerRecord::from_arrays(&l.weight, &l.bias)).collect(),
            optimizer: optimizer.map(|o| OptimizerRecord {
                config: o.config,
                lr: o.lr,
                step: o.step,
                m: records(&o.m),
                v: records(&o.v),
            }),
        }
    }

    pub fn parameters(&self) -> Result<ModelParameters, CheckpointError> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, r)| r.to_arrays(i).map(|(weight, bias)| Layer { weight, bias }))
            .collect::<Result<Vec<_>, _>>()?;
        let params = ModelParameters { architecture: self.architecture, layers };
        params.check_shapes()?;
        Ok(params)
    }

    pub fn optimizer_state(&self) -> Result<Option<OptimizerState>, CheckpointError> {
        let Some(o) = &self.optimizer else { return Ok(None) };
        let unpack = |rs: &[LayerRecord]| {
            rs.iter().enumerate().map(|(i, r)| r.to_arrays(i)).collect::<Result<LayerGrads, _>>()
        };
        Ok(Some(OptimizerState { config: o.config, lr: o.lr, step: o.step, m: unpack(&o.m)?, v: unpack(&o.v)? }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(c.format_version));
        }
        c.parameters()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
