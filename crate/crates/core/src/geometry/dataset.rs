use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keypoint {
    pub label: usize,
    pub xyz: Point,
}

/// One annotated shape: its cloud, per-point part ids and labelled keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSample {
    pub shape_id: String,
    pub family: String,
    #[serde(rename = "points")]
    pub cloud: PointCloud,
    pub part_labels: Vec<usize>,
    pub keypoints: Vec<Keypoint>,
}

impl ShapeSample {
    pub fn n_points(&self) -> usize {
        self.cloud.len()
    }

    /// Number of part ids, `max(label) + 1`.
    pub fn num_parts(&self) -> usize {
        self.part_labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn keypoint(&self, label: usize) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        if self.part_labels.len() != self.cloud.len() {
            return Err(Error::InvalidInput(format!(
                "shape {}: {} labels for {} points",
                self.shape_id,
                self.part_labels.len(),
                self.cloud.len()
            )));
        }
        if self.cloud.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "shape {}: non-finite coordinate",
                self.shape_id
            )));
        }
        let mut seen = vec![false; self.num_parts()];
        for &l in &self.part_labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "shape {}: part {missing} has no points",
                self.shape_id
            )));
        }
        let mut labels: Vec<usize> = self.keypoints.iter().map(|k| k.label).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!(
                "shape {}: duplicate keypoint label",
                self.shape_id
            )));
        }
        Ok(())
    }
}

/// Serializes one shape per line.
pub fn write_jsonl(path: &Path, shapes: &[ShapeSample]) -> Result<()> {
    let mut out = String::new();
    for s in shapes {
        let line = serde_json::to_string(s).map_err(|e| Error::parse("dataset", e))?;
        writeln!(out, "{line}").expect("writing to a String cannot fail");
    }
    io::write_atomic(path, out.as_bytes())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ShapeSample>> {
    let text = io::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let s: ShapeSample = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?;
            s.validate()?;
            Ok(s)
        })
        .collect()
}
