use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ConstraintMode, ModelParams, OptimizerState};
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    architecture: Architecture,
    mode: ConstraintMode,
    k: usize,
    layers: Vec<LayerRecord>,
    optimizer: OptimizerState,
    step: u64,
}

/// Everything needed to resume training or evaluate a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub mode: ConstraintMode,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let layers = (0..p.num_layers())
            .map(|l| {
                let (inputs, outputs) = p.layer_shape(l);
                LayerRecord {
                    inputs,
                    outputs,
                    weights: p.weights(l).to_vec(),
                    bias: p.bias(l).to_vec(),
                }
            })
            .collect();
        let file = CheckpointFile {
            architecture: p.architecture().clone(),
            mode: self.mode,
            k: p.architecture().k,
            layers,
            optimizer: self.optimizer.clone(),
            step: self.optimizer.step,
        };
        serde_json::to_string(&file).map_err(|e| Error::parse("checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))?;
        if file.k != file.architecture.k {
            return Err(Error::InvalidInput(format!(
                "checkpoint k = {} disagrees with architecture k = {}",
                file.k, file.architecture.k
            )));
        }
        if file.step != file.optimizer.step {
            return Err(Error::InvalidInput("checkpoint step disagrees with optimizer".into()));
        }
        let layers: Vec<(Vec<f64>, Vec<f64>)> =
            file.layers.into_iter().map(|l| (l.weights, l.bias)).collect();
        let params = ModelParams::from_layers(&file.architecture, &layers)?;
        if file.optimizer.m.len() != params.len() || file.optimizer.v.len() != params.len() {
            return Err(Error::InvalidInput("optimizer moments do not match parameters".into()));
        }
        Ok(Self {
            params,
            optimizer: file.optimizer,
            mode: file.mode,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_to_string(path)?)
    }
}
