use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{grad_wrt_a, l21_norm, projection_error};
use crate::error::{Error, Result};
use crate::geometry::{
    draw_subset, flip_bits, keypoint_subset_function, part_indicator, sample_keypoint_subset,
    PartBlacklist, ProbeFunction, ProbeKind, ShapeSample, SpectralBasis,
};
use crate::model::{
    adam_step, backward, forward, Architecture, Checkpoint, ConstraintMode, Gradients, ModelParams,
    OptimizerState,
};
use crate::numerics::{DenseMatrix, RngStream};
use crate::solver::{solve_box_ls, solve_ridge_ls, solve_shared_box_ls};

/// Regularization of the unconstrained inner solve in smooth-map mode.
const RIDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: ConstraintMode,
    pub k: usize,
    pub gamma: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Probability of flipping each entry of a segmentation probe.
    pub noise_prob: f64,
    /// Fraction of `(shape, part)` pairs never shown during training.
    pub partial_fraction: f64,
    pub siamese: bool,
    /// Gaussian width of keypoint probes.
    pub sigma: f64,
    /// Laplacian eigenvectors mixed into smooth-map probes.
    pub num_bases: usize,
    /// Neighbours per point in the Laplacian graph.
    pub knn: usize,
    pub local_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: ConstraintMode::Segmentation,
            k: 10,
            gamma: 1.0,
            eta: 1e-3,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            noise_prob: 0.0,
            partial_fraction: 0.0,
            siamese: false,
            sigma: crate::geometry::DEFAULT_SIGMA,
            num_bases: 10,
            knn: crate::geometry::DEFAULT_KNN,
            local_widths: vec![64, 64],
            head_widths: vec![64],
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            local: self.local_widths.clone(),
            head: self.head_widths.clone(),
            k: self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return bad(format!("noise_prob must lie in [0, 1], got {}", self.noise_prob));
        }
        if !(0.0..=1.0).contains(&self.partial_fraction) {
            return bad(format!(
                "partial_fraction must lie in [0, 1], got {}",
                self.partial_fraction
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.num_bases < 1 || self.knn < 1 {
            return bad("num_bases and knn must be at least 1".into());
        }
        if self.siamese && self.mode == ConstraintMode::SmoothMap {
            return bad("siamese training needs labelled probes (seg or key mode)".into());
        }
        self.architecture().validate()
    }
}

/// Batch averages for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    /// Mean projection error `‖Ax − f‖²`.
    pub f_mean: f64,
    pub l21_mean: f64,
    /// Mean of `F + γ‖A‖₂,₁`.
    pub loss: f64,
    pub inner_iterations_mean: f64,
    pub inner_iterations_max: usize,
    pub inner_unconverged: usize,
}

/// One shape with the probe function drawn for it.
#[derive(Debug, Clone)]
pub struct TrainSample<'a> {
    pub shape: &'a ShapeSample,
    pub function: ProbeFunction,
}

/// Two shapes with probes for the same labels, solved with one shared `x`.
#[derive(Debug, Clone)]
pub struct PairSample<'a> {
    pub first: TrainSample<'a>,
    pub second: TrainSample<'a>,
}

#[derive(Debug, Clone, Copy, Default)]
struct SampleStats {
    f: f64,
    l21: f64,
    loss: f64,
    iterations: usize,
    converged: bool,
}

fn expected_kind(mode: ConstraintMode) -> ProbeKind {
    match mode {
        ConstraintMode::Segmentation => ProbeKind::Indicator,
        ConstraintMode::Keypoint => ProbeKind::KeypointDistance,
        ConstraintMode::SmoothMap => ProbeKind::Smooth,
    }
}

fn check_sample(sample: &TrainSample<'_>, mode: ConstraintMode) -> Result<()> {
    let want = expected_kind(mode);
    if sample.function.kind != want {
        return Err(Error::InvalidInput(format!(
            "shape {}: {:?} probe cannot train a {mode} model (expected {want:?})",
            sample.shape.shape_id, sample.function.kind
        )));
    }
    if sample.function.len() != sample.shape.n_points() {
        return Err(Error::InvalidInput(format!(
            "shape {}: probe has {} values for {} points",
            sample.shape.shape_id,
            sample.function.len(),
            sample.shape.n_points()
        )));
    }
    if sample.function.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "shape {}: probe function is not finite",
            sample.shape.shape_id
        )));
    }
    Ok(())
}

fn forward_dictionary(params: &ModelParams, shape: &ShapeSample, mode: ConstraintMode) -> Result<(DenseMatrix, crate::model::ForwardTrace)> {
    match forward(params, &shape.cloud, mode) {
        Ok((dict, trace)) => Ok((dict.matrix, trace)),
        Err(Error::NumericOverflow { layer }) => Err(Error::Numeric(format!(
            "shape {}: non-finite activations at layer {layer}",
            shape.shape_id
        ))),
        Err(e) => Err(e),
    }
}

fn finite_loss(shape: &ShapeSample, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("shape {}: non-finite loss {loss}", shape.shape_id)))
    }
}

fn inner_solve(a: &DenseMatrix, f: &[f64], mode: ConstraintMode) -> Result<(Vec<f64>, usize, bool)> {
    if mode.boxed_coefficients() {
        let (x, report) = solve_box_ls(a, f)?;
        Ok((x.0, report.iterations, report.converged))
    } else {
        Ok((solve_ridge_ls(a, f, RIDGE_EPS)?.0, 0, true))
    }
}

fn single_gradient(
    params: &ModelParams,
    sample: &TrainSample<'_>,
    cfg: &TrainConfig,
) -> Result<(Gradients, SampleStats)> {
    let (a, trace) = forward_dictionary(params, sample.shape, cfg.mode)?;
    let f = &sample.function.values;
    let (x, iterations, converged) = inner_solve(&a, f, cfg.mode)?;
    let err = projection_error(&a, &x, f);
    let l21 = l21_norm(&a);
    let loss = err + cfg.gamma * l21;
    finite_loss(sample.shape, loss)?;
    let g = backward(params, &trace, &grad_wrt_a(&a, &x, f, cfg.gamma))?;
    Ok((g, SampleStats { f: err, l21, loss, iterations, converged }))
}

fn pair_gradient_inner(
    params: &ModelParams,
    pair: &PairSample<'_>,
    cfg: &TrainConfig,
) -> Result<(Gradients, SampleStats)> {
    let (a1, t1) = forward_dictionary(params, pair.first.shape, cfg.mode)?;
    let (a2, t2) = forward_dictionary(params, pair.second.shape, cfg.mode)?;
    let (f1, f2) = (&pair.first.function.values, &pair.second.function.values);
    let (x, report) = solve_shared_box_ls(&a1, f1, &a2, f2)?;
    let x = x.0;
    let err = projection_error(&a1, &x, f1) + projection_error(&a2, &x, f2);
    let l21 = l21_norm(&a1) + l21_norm(&a2);
    let loss = err + cfg.gamma * l21;
    finite_loss(pair.first.shape, loss)?;
    let mut g = backward(params, &t1, &grad_wrt_a(&a1, &x, f1, cfg.gamma))?;
    g.add_scaled(&backward(params, &t2, &grad_wrt_a(&a2, &x, f2, cfg.gamma))?, 1.0);
    Ok((
        g,
        SampleStats {
            f: err,
            l21,
            loss,
            iterations: report.iterations,
            converged: report.converged,
        },
    ))
}

/// Gradient of one sample's loss in the network parameters, with `x` fixed at the inner optimum.
pub fn sample_gradient(params: &ModelParams, sample: &TrainSample<'_>, cfg: &TrainConfig) -> Result<Gradients> {
    check_sample(sample, cfg.mode)?;
    Ok(single_gradient(params, sample, cfg)?.0)
}

/// Gradient of a pair's joint loss: both dictionaries share one `x`.
pub fn pair_gradient(params: &ModelParams, pair: &PairSample<'_>, cfg: &TrainConfig) -> Result<Gradients> {
    check_pair(pair, cfg)?;
    Ok(pair_gradient_inner(params, pair, cfg)?.0)
}

fn check_pair(pair: &PairSample<'_>, cfg: &TrainConfig) -> Result<()> {
    if !cfg.mode.boxed_coefficients() {
        return Err(Error::InvalidInput("paired training requires seg or key mode".into()));
    }
    check_sample(&pair.first, cfg.mode)?;
    check_sample(&pair.second, cfg.mode)
}

/// Averages per-sample results in input order so the sum is independent of scheduling.
fn commit(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    results: Vec<(Gradients, SampleStats)>,
) -> Result<StepMetrics> {
    let b = results.len() as f64;
    let mut total = params.zero_gradients();
    let mut metrics = StepMetrics {
        step: state.step + 1,
        f_mean: 0.0,
        l21_mean: 0.0,
        loss: 0.0,
        inner_iterations_mean: 0.0,
        inner_iterations_max: 0,
        inner_unconverged: 0,
    };
    for (g, s) in &results {
        total.add_scaled(g, 1.0 / b);
        metrics.f_mean += s.f / b;
        metrics.l21_mean += s.l21 / b;
        metrics.loss += s.loss / b;
        metrics.inner_iterations_mean += s.iterations as f64 / b;
        metrics.inner_iterations_max = metrics.inner_iterations_max.max(s.iterations);
        metrics.inner_unconverged += usize::from(!s.converged);
    }
    adam_step(params, &total, state)?;
    Ok(metrics)
}

/// One alternating step: inner solve per sample, mean gradient at fixed `x`, one Adam update.
///
/// On error the parameters and optimizer state are left untouched.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &[TrainSample<'_>],
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for s in batch {
        check_sample(s, cfg.mode)?;
    }
    let p = &*params;
    let results = batch
        .par_iter()
        .map(|s| single_gradient(p, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    commit(params, state, results)
}

/// Like [`train_step`], but every element couples two shapes through a shared `x`.
pub fn train_step_siamese(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &[PairSample<'_>],
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for pair in batch {
        check_pair(pair, cfg)?;
    }
    let p = &*params;
    let results = batch
        .par_iter()
        .map(|pair| pair_gradient_inner(p, pair, cfg))
        .collect::<Result<Vec<_>>>()?;
    commit(params, state, results)
}

/// Mean loss over the batch, re-solving each inner problem.
pub fn batch_loss(params: &ModelParams, batch: &[TrainSample<'_>], cfg: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let losses = batch
        .par_iter()
        .map(|s| {
            check_sample(s, cfg.mode)?;
            let (a, _) = forward_dictionary(params, s.shape, cfg.mode)?;
            let (x, _, _) = inner_solve(&a, &s.function.values, cfg.mode)?;
            let loss = projection_error(&a, &x, &s.function.values) + cfg.gamma * l21_norm(&a);
            finite_loss(s.shape, loss)?;
            Ok(loss)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Draws training probes for a fixed set of shapes.
///
/// Holds the partial-segmentation blacklist and lazily computed Laplacian
/// eigenbases, both indexed by the shape's position in the training set.
#[derive(Debug)]
pub struct ProbeSampler {
    mode: ConstraintMode,
    noise_prob: f64,
    sigma: f64,
    knn: usize,
    num_bases: usize,
    blacklist: PartBlacklist,
    bases: Vec<OnceLock<SpectralBasis>>,
}

impl ProbeSampler {
    pub fn new(shapes: &[ShapeSample], cfg: &TrainConfig, rng: &RngStream) -> Result<Self> {
        let parts: Vec<usize> = shapes.iter().map(ShapeSample::num_parts).collect();
        let blacklist = if cfg.partial_fraction > 0.0 {
            PartBlacklist::sample(&parts, cfg.partial_fraction, &mut rng.substream("blacklist"))?
        } else {
            PartBlacklist::default()
        };
        Ok(Self {
            mode: cfg.mode,
            noise_prob: cfg.noise_prob,
            sigma: cfg.sigma,
            knn: cfg.knn,
            num_bases: cfg.num_bases,
            blacklist,
            bases: (0..shapes.len()).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn blacklist(&self) -> &PartBlacklist {
        &self.blacklist
    }

    fn basis(&self, index: usize, shape: &ShapeSample) -> Result<&SpectralBasis> {
        if let Some(b) = self.bases[index].get() {
            return Ok(b);
        }
        let knn = self.knn.min(shape.n_points().saturating_sub(1)).max(1);
        let basis = SpectralBasis::from_cloud(&shape.cloud, knn, self.num_bases)?;
        Ok(self.bases[index].get_or_init(|| basis))
    }

    /// Probe for training-set shape `index`.
    pub fn sample(&self, index: usize, shape: &ShapeSample, rng: &mut RngStream) -> Result<ProbeFunction> {
        match self.mode {
            ConstraintMode::Segmentation => {
                let visible = self.blacklist.visible(index, shape.num_parts());
                let mut f = part_indicator(&shape.part_labels, &draw_subset(&visible, rng));
                flip_bits(&mut f, self.noise_prob, rng);
                Ok(f)
            }
            ConstraintMode::Keypoint => Ok(sample_keypoint_subset(shape, self.sigma, rng)?.1),
            ConstraintMode::SmoothMap => Ok(self.basis(index, shape)?.random_function(rng)),
        }
    }

    /// Probes over the same labels on two shapes.
    pub fn sample_pair(
        &self,
        (i, first): (usize, &ShapeSample),
        (j, second): (usize, &ShapeSample),
        rng: &mut RngStream,
    ) -> Result<(ProbeFunction, ProbeFunction)> {
        match self.mode {
            ConstraintMode::Segmentation => {
                let visible: Vec<usize> = self
                    .blacklist
                    .visible(i, first.num_parts())
                    .into_iter()
                    .filter(|&p| p < second.num_parts() && !self.blacklist.is_hidden(j, p))
                    .collect();
                if visible.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "shapes {} and {} share no visible part",
                        first.shape_id, second.shape_id
                    )));
                }
                let subset = draw_subset(&visible, rng);
                let mut f1 = part_indicator(&first.part_labels, &subset);
                let mut f2 = part_indicator(&second.part_labels, &subset);
                flip_bits(&mut f1, self.noise_prob, rng);
                flip_bits(&mut f2, self.noise_prob, rng);
                Ok((f1, f2))
            }
            ConstraintMode::Keypoint => {
                let labels: Vec<usize> = first
                    .keypoints
                    .iter()
                    .map(|k| k.label)
                    .filter(|&l| second.keypoint(l).is_some())
                    .collect();
                if labels.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "shapes {} and {} share no keypoint label",
                        first.shape_id, second.shape_id
                    )));
                }
                let subset = draw_subset(&labels, rng);
                Ok((
                    keypoint_subset_function(first, &subset, self.sigma)?,
                    keypoint_subset_function(second, &subset, self.sigma)?,
                ))
            }
            ConstraintMode::SmoothMap => Err(Error::InvalidInput(
                "smooth-map probes carry no labels to pair".into(),
            )),
        }
    }
}

/// Epoch/batch scheduler around [`train_step`].
///
/// Every random choice is keyed by the global step, so a trainer rebuilt from
/// a checkpoint continues exactly where the original run would have gone.
#[derive(Debug)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    shapes: &'a [ShapeSample],
    sampler: ProbeSampler,
    rng: RngStream,
    params: ModelParams,
    optimizer: OptimizerState,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters from `cfg.seed`.
    pub fn new(cfg: TrainConfig, shapes: &'a [ShapeSample]) -> Result<Self> {
        cfg.validate()?;
        let rng = RngStream::new(cfg.seed);
        let params = ModelParams::init(&cfg.architecture(), &rng.substream("init"))?;
        let optimizer = OptimizerState::new(params.len(), cfg.eta);
        Self::assemble(cfg, shapes, rng, params, optimizer)
    }

    pub fn from_checkpoint(cfg: TrainConfig, shapes: &'a [ShapeSample], ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ck.mode != cfg.mode {
            return Err(Error::InvalidConfig(format!(
                "checkpoint was trained in {} mode, config asks for {}",
                ck.mode, cfg.mode
            )));
        }
        if *ck.params.architecture() != cfg.architecture() {
            return Err(Error::InvalidConfig(
                "checkpoint architecture differs from the configured one".into(),
            ));
        }
        let rng = RngStream::new(cfg.seed);
        let mut optimizer = ck.optimizer;
        optimizer.eta = cfg.eta;
        Self::assemble(cfg, shapes, rng, ck.params, optimizer)
    }

    fn assemble(
        cfg: TrainConfig,
        shapes: &'a [ShapeSample],
        rng: RngStream,
        params: ModelParams,
        optimizer: OptimizerState,
    ) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidInput("no training shapes".into()));
        }
        if let Some(s) = shapes.iter().find(|s| s.n_points() < cfg.k) {
            return Err(Error::InvalidInput(format!(
                "shape {} has {} points, fewer than k = {}",
                s.shape_id,
                s.n_points(),
                cfg.k
            )));
        }
        let sampler = ProbeSampler::new(shapes, &cfg, &rng)?;
        Ok(Self {
            cfg,
            shapes,
            sampler,
            rng,
            params,
            optimizer,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn sampler(&self) -> &ProbeSampler {
        &self.sampler
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.shapes.len().div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.cfg.epochs as u64
    }

    pub fn is_finished(&self) -> bool {
        self.step() >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            mode: self.cfg.mode,
        }
    }

    /// Training-set indices of the batch taken at `step`.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let mut order: Vec<usize> = (0..self.shapes.len()).collect();
        order.shuffle(&mut self.rng.indexed("epoch", step / spe));
        let start = (step % spe) as usize * self.cfg.batch_size;
        let end = (start + self.cfg.batch_size).min(order.len());
        order[start..end].to_vec()
    }

    /// The probes used at `step`, in batch order.
    pub fn batch(&self, step: u64) -> Result<Vec<TrainSample<'a>>> {
        let mut rng = self.rng.indexed("probe", step);
        self.batch_indices(step)
            .into_iter()
            .map(|i| {
                let shape = &self.shapes[i];
                Ok(TrainSample {
                    shape,
                    function: self.sampler.sample(i, shape, &mut rng)?,
                })
            })
            .collect()
    }

    /// Pairs each batch shape with a random partner from the same family.
    pub fn pair_batch(&self, step: u64) -> Result<Vec<PairSample<'a>>> {
        let mut rng = self.rng.indexed("probe", step);
        let mut partners = self.rng.indexed("partner", step);
        self.batch_indices(step)
            .into_iter()
            .map(|i| {
                let first = &self.shapes[i];
                let peers: Vec<usize> = (0..self.shapes.len())
                    .filter(|&j| j != i && self.shapes[j].family == first.family)
                    .collect();
                let j = if peers.is_empty() {
                    i
                } else {
                    peers[partners.random_range(0..peers.len())]
                };
                let second = &self.shapes[j];
                let (f1, f2) = self.sampler.sample_pair((i, first), (j, second), &mut rng)?;
                Ok(PairSample {
                    first: TrainSample { shape: first, function: f1 },
                    second: TrainSample { shape: second, function: f2 },
                })
            })
            .collect()
    }

    /// Runs the next step. Parameters are unchanged if it fails.
    pub fn advance(&mut self) -> Result<StepMetrics> {
        let step = self.step();
        if self.cfg.siamese {
            let batch = self.pair_batch(step)?;
            train_step_siamese(&mut self.params, &mut self.optimizer, &batch, &self.cfg)
        } else {
            let batch = self.batch(step)?;
            train_step(&mut self.params, &mut self.optimizer, &batch, &self.cfg)
        }
    }

    /// Runs until the configured epochs are done, handing each step's metrics to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let m = self.advance()?;
            on_step(self, &m)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (ModelParams, OptimizerState) {
        (self.params, self.optimizer)
    }
}
