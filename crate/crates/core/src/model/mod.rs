//! Per-point encoder producing the dictionary, its gradient, and the optimizer.

mod adam;
mod checkpoint;
mod network;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::Checkpoint;
pub use network::{backward, forward, Architecture, Dictionary, ForwardTrace, Gradients, ModelParams};

/// Structural constraint on the dictionary, enforced by the output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintMode {
    /// Rows sum to one (softmax across atoms); atoms partition the points.
    #[serde(rename = "seg")]
    Segmentation,
    /// Columns sum to one (softmax across points); each atom picks out a point.
    #[serde(rename = "key")]
    Keypoint,
    /// Columns have unit Euclidean norm.
    #[serde(rename = "map")]
    SmoothMap,
}

impl ConstraintMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::Segmentation => "seg",
            ConstraintMode::Keypoint => "key",
            ConstraintMode::SmoothMap => "map",
        }
    }

    /// Whether combination weights are confined to `[0, 1]`.
    pub fn boxed_coefficients(self) -> bool {
        !matches!(self, ConstraintMode::SmoothMap)
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "seg" | "segmentation" => Ok(ConstraintMode::Segmentation),
            "key" | "keypoint" => Ok(ConstraintMode::Keypoint),
            "map" | "smooth" => Ok(ConstraintMode::SmoothMap),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected seg, key or map)"
            ))),
        }
    }
}
