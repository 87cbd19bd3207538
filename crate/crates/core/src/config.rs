//! Run configuration: one TOML document shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FamilyParams, Preset};
use crate::io;
use crate::loss::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `table4`, `chair6` or `boxesN`.
    pub preset: String,
    pub count: usize,
    pub n_points: usize,
    pub seed: u64,
    pub dim_jitter: f64,
    pub point_noise: f64,
    pub swap_fraction: f64,
    /// Share of the dataset used for training; the rest is the test split.
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let family = FamilyParams::default();
        Self {
            preset: "table4".into(),
            count: 600,
            n_points: 512,
            seed: 0,
            dim_jitter: family.dim_jitter,
            point_noise: family.point_noise,
            swap_fraction: family.swap_fraction,
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn preset(&self) -> Result<Preset> {
        self.preset.parse()
    }

    pub fn family_params(&self) -> FamilyParams {
        FamilyParams {
            dim_jitter: self.dim_jitter,
            point_noise: self.point_noise,
            swap_fraction: self.swap_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    /// Experiment bundle directory.
    pub output: PathBuf,
    /// Checkpoint to evaluate; empty means `<output>/checkpoint.json`.
    pub checkpoint: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: "data/dataset.jsonl".into(),
            output: "runs/default".into(),
            checkpoint: PathBuf::new(),
        }
    }
}

impl PathsConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        if self.checkpoint.as_os_str().is_empty() {
            self.output.join("checkpoint.json")
        } else {
            self.checkpoint.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Miou,
    Pck,
    Recall,
    Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Distances in normalized model units.
    pub pck_thresholds: Vec<f64>,
    pub recall_thresholds: Vec<f64>,
    /// Replace the network output by one-hot ground-truth parts.
    pub oracle: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Miou, Metric::Recall, Metric::Confusion],
            pck_thresholds: vec![0.01, 0.02, 0.03, 0.05, 0.075, 0.1],
            recall_thresholds: vec![0.25, 0.5, 0.75],
            oracle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub paths: PathsConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Parses the right-hand side of `--set`: any TOML value, or a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config", e))
    }

    /// Loads `path` (or defaults when `None`), applies `key=value` overrides, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => io::read_to_string(p)?,
            None => String::new(),
        };
        let mut doc: toml::Table = toml::from_str(&text).map_err(|e| Error::parse("config", e))?;
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("config", e))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.preset()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.data.train_fraction
            )));
        }
        if self.eval.recall_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::InvalidConfig("recall thresholds must lie in (0, 1]".into()));
        }
        if self.eval.pck_thresholds.iter().any(|&t| !(t.is_finite() && t >= 0.0)) {
            return Err(Error::InvalidConfig("PCK thresholds must be non-negative".into()));
        }
        self.train.validate()
    }
}

/// Sets a dotted key such as `train.k=12`, creating intermediate tables as needed.
pub fn apply_override(doc: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}
