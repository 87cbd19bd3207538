//! Drivers behind the `gen-data`, `train` and `eval` subcommands.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{EvalConfig, Metric, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    atom_mass, binarize_rows, instances_from_labels, label_confusion, matched_miou_category,
    matched_miou_shape, pck_curve, predicted_keypoints, proposal_recall, proposals_from_prediction,
    KeypointObservation, MetricReport, ShapeMetrics,
};
use crate::geometry::{generate_family, read_jsonl, write_jsonl, ShapeSample};
use crate::io;
use crate::loss::{StepMetrics, Trainer};
use crate::model::{forward, Checkpoint, ConstraintMode, ModelParams};
use crate::numerics::{DenseMatrix, RngStream};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";

const TRAIN_LOG_HEADER: &str = "step,F_mean,l21_mean,loss,lr";

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub shapes: usize,
    /// Total points per part label.
    pub part_histogram: BTreeMap<usize, usize>,
}

impl fmt::Display for DataSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} shapes", self.shapes)?;
        for (label, count) in &self.part_histogram {
            writeln!(f, "  part {label}: {count} points")?;
        }
        Ok(())
    }
}

pub fn summarize(shapes: &[ShapeSample]) -> DataSummary {
    let mut part_histogram = BTreeMap::new();
    for s in shapes {
        for &l in &s.part_labels {
            *part_histogram.entry(l).or_insert(0) += 1;
        }
    }
    DataSummary {
        shapes: shapes.len(),
        part_histogram,
    }
}

/// Generates the configured synthetic family and writes it as JSONL.
pub fn gen_data(cfg: &RunConfig) -> Result<DataSummary> {
    let d = &cfg.data;
    let shapes = generate_family(
        d.preset()?,
        d.count,
        d.n_points,
        &d.family_params(),
        &RngStream::new(d.seed),
    )?;
    write_jsonl(&cfg.paths.dataset, &shapes)?;
    Ok(summarize(&shapes))
}

/// Seeded train/test split; the train side gets `round(fraction · n)` shapes, at least one.
pub fn split_dataset(shapes: Vec<ShapeSample>, fraction: f64, seed: u64) -> (Vec<ShapeSample>, Vec<ShapeSample>) {
    let n = shapes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(seed).substream("split"));
    let n_train = ((fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let mut slots: Vec<Option<ShapeSample>> = shapes.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<ShapeSample> {
        ids.iter().map(|&i| slots[i].take().expect("each index taken once")).collect()
    };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..]);
    (train, test)
}

fn load_split(cfg: &RunConfig) -> Result<(Vec<ShapeSample>, Vec<ShapeSample>)> {
    let shapes = read_jsonl(&cfg.paths.dataset)?;
    if shapes.is_empty() {
        return Err(Error::InvalidInput(format!(
            "dataset {} is empty",
            cfg.paths.dataset.display()
        )));
    }
    Ok(split_dataset(shapes, cfg.data.train_fraction, cfg.data.split_seed))
}

fn log_row(m: &StepMetrics, lr: f64) -> String {
    format!("{},{},{},{},{}", m.step, m.f_mean, m.l21_mean, m.loss, lr)
}

/// Rows of an existing training log up to and including `step`.
fn previous_log(path: &Path, step: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(io::read_to_string(path)?
        .lines()
        .skip(1)
        .filter(|row| {
            row.split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s <= step)
        })
        .map(str::to_string)
        .collect())
}

fn write_log(path: &Path, rows: &[String]) -> Result<()> {
    let mut text = String::from(TRAIN_LOG_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    io::write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub resumed_from: Option<u64>,
    pub final_step: u64,
    pub last: Option<StepMetrics>,
}

/// Trains into `paths.output`, resuming from the bundle's checkpoint when one exists.
///
/// The checkpoint and log are rewritten after every epoch. If a step fails the
/// last good checkpoint is written before the error is returned.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (train_set, _) = load_split(cfg)?;
    let out = &cfg.paths.output;
    let ck_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(TRAIN_LOG_FILE);

    let (mut trainer, resumed_from) = if ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let step = ck.step();
        (Trainer::from_checkpoint(cfg.train.clone(), &train_set, ck)?, Some(step))
    } else {
        (Trainer::new(cfg.train.clone(), &train_set)?, None)
    };
    let mut rows = previous_log(&log_path, trainer.step())?;
    io::write_atomic(&out.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;

    let spe = trainer.steps_per_epoch();
    let total = trainer.total_steps();
    let mut last = None;
    while !trainer.is_finished() {
        match trainer.advance() {
            Ok(m) => {
                rows.push(log_row(&m, cfg.train.eta));
                if trainer.step() % spe == 0 || trainer.is_finished() {
                    trainer.checkpoint().save(&ck_path)?;
                    write_log(&log_path, &rows)?;
                    eprintln!(
                        "epoch {}/{} step {}/{} loss {:.6} F {:.6} l21 {:.4}",
                        trainer.step().div_ceil(spe),
                        cfg.train.epochs,
                        trainer.step(),
                        total,
                        m.loss,
                        m.f_mean,
                        m.l21_mean
                    );
                }
                last = Some(m);
            }
            Err(e) => {
                trainer.checkpoint().save(&ck_path)?;
                write_log(&log_path, &rows)?;
                return Err(e);
            }
        }
    }
    trainer.checkpoint().save(&ck_path)?;
    write_log(&log_path, &rows)?;
    Ok(TrainOutcome {
        resumed_from,
        final_step: trainer.step(),
        last,
    })
}

/// Network dictionaries for each shape, in order.
pub fn predict(params: &ModelParams, mode: ConstraintMode, shapes: &[ShapeSample]) -> Result<Vec<DenseMatrix>> {
    shapes
        .par_iter()
        .map(|s| forward(params, &s.cloud, mode).map(|(d, _)| d.matrix))
        .collect()
}

/// One-hot ground-truth part dictionaries, used to check the metric plumbing.
pub fn oracle_dictionaries(shapes: &[ShapeSample], k: usize) -> Result<Vec<DenseMatrix>> {
    shapes
        .iter()
        .map(|s| {
            if s.num_parts() > k {
                return Err(Error::InvalidInput(format!(
                    "shape {} has {} parts but k = {k}",
                    s.shape_id,
                    s.num_parts()
                )));
            }
            let mut a = DenseMatrix::zeros(s.n_points(), k);
            for (i, &l) in s.part_labels.iter().enumerate() {
                a[(i, l)] = 1.0;
            }
            Ok(a)
        })
        .collect()
}

fn check_metrics(mode: ConstraintMode, metrics: &[Metric]) -> Result<()> {
    for &m in metrics {
        let wanted = match m {
            Metric::Pck => ConstraintMode::Keypoint,
            Metric::Miou | Metric::Recall | Metric::Confusion => ConstraintMode::Segmentation,
        };
        if wanted != mode {
            return Err(Error::InvalidConfig(format!(
                "metric {m:?} needs a {wanted} model but the checkpoint was trained in {mode} mode"
            )));
        }
    }
    Ok(())
}

/// Computes the requested metrics for `dicts[i]` predicted on `shapes[i]`.
pub fn evaluate_dictionaries(
    mode: ConstraintMode,
    shapes: &[ShapeSample],
    dicts: &[DenseMatrix],
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    check_metrics(mode, &cfg.metrics)?;
    if shapes.is_empty() || shapes.len() != dicts.len() {
        return Err(Error::InvalidInput("need one dictionary per evaluated shape".into()));
    }
    let wants = |m: Metric| cfg.metrics.contains(&m);
    let segs: Vec<(crate::eval::SegmentationPrediction, Vec<usize>)> = dicts
        .iter()
        .zip(shapes)
        .map(|(a, s)| (binarize_rows(a), s.part_labels.clone()))
        .collect();

    let mut per_shape_miou = vec![None; shapes.len()];
    let mut category_miou = BTreeMap::new();
    if wants(Metric::Miou) {
        for (slot, (p, gt)) in per_shape_miou.iter_mut().zip(&segs) {
            *slot = Some(matched_miou_shape(p, gt)?);
        }
        let mut families: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in shapes.iter().enumerate() {
            families.entry(s.family.as_str()).or_default().push(i);
        }
        for (family, ids) in families {
            let members: Vec<_> = ids.iter().map(|&i| segs[i].clone()).collect();
            category_miou.insert(family.to_string(), matched_miou_category(&members)?);
        }
    }
    let mean_shape_miou = wants(Metric::Miou).then(|| {
        per_shape_miou.iter().flatten().sum::<f64>() / shapes.len() as f64
    });

    let pck = if wants(Metric::Pck) {
        let obs = dicts
            .iter()
            .zip(shapes)
            .map(|(a, s)| {
                Ok(KeypointObservation {
                    predicted: predicted_keypoints(a, &s.cloud)?,
                    truth: s.keypoints.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(pck_curve(&obs, &cfg.pck_thresholds)?)
    } else {
        None
    };

    let mut recall = Vec::new();
    if wants(Metric::Recall) {
        let inputs: Vec<_> = segs
            .iter()
            .map(|(p, gt)| (proposals_from_prediction(p), instances_from_labels(gt)))
            .collect();
        for &t in &cfg.recall_thresholds {
            recall.push(proposal_recall(&inputs, t)?);
        }
    }

    let confusion = if wants(Metric::Confusion) {
        let labels = shapes.iter().map(ShapeSample::num_parts).max().unwrap_or(0);
        Some(label_confusion(&segs, labels)?)
    } else {
        None
    };

    let rows = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| ShapeMetrics {
            shape_id: s.shape_id.clone(),
            category: s.family.clone(),
            miou: per_shape_miou[i],
            pck: pck.as_ref().map_or(Vec::new(), |c| c.shapes[i].clone()),
        })
        .collect();

    Ok(MetricReport {
        mode: mode.to_string(),
        shapes: rows,
        mean_shape_miou,
        category_miou,
        pck,
        proposal_recall: recall,
        confusion,
        atom_mass: atom_mass(dicts),
    })
}

/// Evaluates the checkpoint on the test split and writes the metric files into `paths.output`.
pub fn eval(cfg: &RunConfig) -> Result<MetricReport> {
    let ck = Checkpoint::load(&cfg.paths.checkpoint_path())?;
    check_metrics(ck.mode, &cfg.eval.metrics)?;
    let (_, test) = load_split(cfg)?;
    if test.is_empty() {
        return Err(Error::InvalidInput("test split is empty; lower data.train_fraction".into()));
    }
    let dicts = if cfg.eval.oracle {
        oracle_dictionaries(&test, ck.params.architecture().k)?
    } else {
        predict(&ck.params, ck.mode, &test)?
    };
    let report = evaluate_dictionaries(ck.mode, &test, &dicts, &cfg.eval)?;
    let out = &cfg.paths.output;
    io::write_atomic(&out.join(METRICS_JSON_FILE), report.to_json()?.as_bytes())?;
    io::write_atomic(&out.join(METRICS_CSV_FILE), report.to_csv().as_bytes())?;
    Ok(report)
}

/// Short human-readable digest of a report.
pub fn describe(report: &MetricReport) -> String {
    let mut s = String::new();
    if let Some(m) = report.mean_shape_miou {
        let _ = writeln!(s, "per-shape mIoU {m:.4}");
    }
    for (family, c) in &report.category_miou {
        let _ = writeln!(s, "category {family} mIoU {:.4}", c.miou);
    }
    if let Some(p) = &report.pck {
        for ((t, l), g) in p.thresholds.iter().zip(&p.per_shape_matching).zip(&p.global_matching) {
            let _ = writeln!(s, "PCK@{t}: per-shape {l:.4} global {g:.4}");
        }
    }
    for r in &report.proposal_recall {
        let _ = writeln!(s, "recall@{}: {:.4}", r.threshold, r.recall);
    }
    s
}
