use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ConstraintMode;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::numerics::{DenseMatrix, RngStream};

/// Guard added to a near-zero column norm before unit normalization.
const NORM_GUARD: f64 = 1e-12;

/// Layer widths of the per-point encoder.
///
/// Points go through the `local` layers, the last local feature is max-pooled
/// into a global descriptor and concatenated back onto every point, and the
/// `head` layers map that to `k` logits per point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub local: Vec<usize>,
    pub head: Vec<usize>,
    pub k: usize,
}

impl Architecture {
    pub fn new(k: usize) -> Self {
        Self {
            local: vec![64, 64],
            head: vec![64],
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("dictionary size k must be at least 1".into()));
        }
        if self.local.is_empty() {
            return Err(Error::InvalidConfig("at least one local layer is required".into()));
        }
        if self.local.iter().chain(&self.head).any(|&w| w == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of every dense layer in evaluation order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = 3;
        for &w in &self.local {
            shapes.push((width, w));
            width = w;
        }
        width *= 2;
        for &w in &self.head {
            shapes.push((width, w));
            width = w;
        }
        shapes.push((width, self.k));
        shapes
    }

    pub fn num_local(&self) -> usize {
        self.local.len()
    }

    pub fn pooled_width(&self) -> usize {
        *self.local.last().expect("validated architecture has local layers")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerSlot {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: usize,
    pub bias: usize,
}

fn layout(arch: &Architecture) -> (Vec<LayerSlot>, usize) {
    let mut offset = 0;
    let slots = arch
        .layer_shapes()
        .into_iter()
        .map(|(inputs, outputs)| {
            let slot = LayerSlot {
                inputs,
                outputs,
                weights: offset,
                bias: offset + inputs * outputs,
            };
            offset += inputs * outputs + outputs;
            slot
        })
        .collect();
    (slots, offset)
}

/// Network weights stored as one flat vector.
///
/// Layer `l` owns `inputs x outputs` row-major weights followed by `outputs` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    slots: Vec<LayerSlot>,
    values: Vec<f64>,
}

/// Gradient with the same flat layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn add_scaled(&mut self, other: &Gradients, alpha: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl ModelParams {
    /// Fan-in scaled normal weights (`std = sqrt(2 / fan_in)`) and zero biases.
    pub fn init(arch: &Architecture, rng: &RngStream) -> Result<Self> {
        arch.validate()?;
        let (slots, len) = layout(arch);
        let mut values = vec![0.0; len];
        for (l, slot) in slots.iter().enumerate() {
            let mut layer_rng = rng.indexed("layer", l as u64);
            let std = (2.0 / slot.inputs as f64).sqrt();
            for w in &mut values[slot.weights..slot.bias] {
                let z: f64 = StandardNormal.sample(&mut layer_rng);
                *w = std * z;
            }
        }
        Ok(Self {
            arch: arch.clone(),
            slots,
            values,
        })
    }

    /// Rebuilds parameters from per-layer weight and bias arrays.
    pub fn from_layers(arch: &Architecture, layers: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        arch.validate()?;
        let (slots, len) = layout(arch);
        if layers.len() != slots.len() {
            return Err(Error::InvalidInput(format!(
                "architecture has {} layers, got {}",
                slots.len(),
                layers.len()
            )));
        }
        let mut values = Vec::with_capacity(len);
        for (l, (slot, (w, b))) in slots.iter().zip(layers).enumerate() {
            if w.len() != slot.inputs * slot.outputs || b.len() != slot.outputs {
                return Err(Error::InvalidInput(format!("layer {l} has mismatched sizes")));
            }
            values.extend_from_slice(w);
            values.extend_from_slice(b);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(Self {
            arch: arch.clone(),
            slots,
            values,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_layers(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.slots[layer];
        &self.values[s.weights..s.bias]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.slots[layer];
        &self.values[s.bias..s.bias + s.outputs]
    }

    /// `(inputs, outputs)` of layer `layer`.
    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        let s = self.slots[layer];
        (s.inputs, s.outputs)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros(self.values.len())
    }
}

/// Activations cached by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    arch: Architecture,
    mode: ConstraintMode,
    n: usize,
    input: Vec<f64>,
    /// Post-ReLU output of every local layer.
    local: Vec<Vec<f64>>,
    /// Max-pooled global feature and the winning point per channel.
    global: Vec<f64>,
    argmax: Vec<usize>,
    /// Post-ReLU output of every head layer.
    head: Vec<Vec<f64>>,
    logits: Vec<f64>,
    /// Column norms before normalization (smooth-map mode only).
    col_norms: Vec<f64>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn global_feature(&self) -> &[f64] {
        &self.global
    }

    pub fn logits(&self) -> DenseMatrix {
        DenseMatrix::from_raw(self.n, self.arch.k, self.logits.clone())
    }
}

/// The predicted per-shape dictionary; columns are atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub matrix: DenseMatrix,
    pub mode: ConstraintMode,
}

impl Dictionary {
    /// Largest violation of the mode's structural constraints.
    pub fn constraint_violation(&self) -> f64 {
        let a = &self.matrix;
        let range = |v: f64| (v.max(0.0) - v).abs().max((v - 1.0).max(0.0));
        match self.mode {
            ConstraintMode::Segmentation => (0..a.rows())
                .map(|i| {
                    let row = a.row(i);
                    let sum_err = (row.iter().sum::<f64>() - 1.0).abs();
                    row.iter().map(|&v| range(v)).fold(sum_err, f64::max)
                })
                .fold(0.0, f64::max),
            ConstraintMode::Keypoint => {
                let sums = a.column_sums();
                let sum_err = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
                a.as_slice().iter().map(|&v| range(v)).fold(sum_err, f64::max)
            }
            ConstraintMode::SmoothMap => a
                .column_norms()
                .iter()
                .map(|n| (n - 1.0).abs())
                .fold(0.0, f64::max),
        }
    }
}

/// `out = relu?(input · W + b)` for `n` rows.
fn dense(input: &[f64], n: usize, w: &[f64], b: &[f64], relu: bool) -> Vec<f64> {
    let (inputs, outputs) = (w.len() / b.len(), b.len());
    let mut out = vec![0.0; n * outputs];
    for r in 0..n {
        let orow = &mut out[r * outputs..(r + 1) * outputs];
        orow.copy_from_slice(b);
        for (i, &x) in input[r * inputs..(r + 1) * inputs].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wrow = &w[i * outputs..(i + 1) * outputs];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += x * wv;
            }
        }
        if relu {
            orow.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    out
}

fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow { layer })
    }
}

/// Evaluates the dictionary for one cloud under `mode`'s output activation.
pub fn forward(
    params: &ModelParams,
    cloud: &PointCloud,
    mode: ConstraintMode,
) -> Result<(Dictionary, ForwardTrace)> {
    let arch = &params.arch;
    let n = cloud.len();
    let k = arch.k;
    if n < k {
        return Err(Error::InvalidInput(format!(
            "cloud has {n} points but the dictionary has {k} atoms"
        )));
    }
    let input: Vec<f64> = cloud.points.iter().flatten().copied().collect();
    check_finite(&input, 0)?;

    let mut layer = 0;
    let mut local = Vec::with_capacity(arch.local.len());
    let mut current = input.clone();
    for _ in 0..arch.local.len() {
        current = dense(&current, n, params.weights(layer), params.bias(layer), true);
        check_finite(&current, layer)?;
        local.push(current.clone());
        layer += 1;
    }

    let d = arch.pooled_width();
    let last = local.last().expect("at least one local layer");
    let mut global = vec![f64::NEG_INFINITY; d];
    let mut argmax = vec![0usize; d];
    for r in 0..n {
        for (c, &v) in last[r * d..(r + 1) * d].iter().enumerate() {
            // Strict comparison keeps the lowest index on ties.
            if v > global[c] {
                global[c] = v;
                argmax[c] = r;
            }
        }
    }

    // First head layer sees [point feature, global feature]; the global half is shared.
    let mut head = Vec::with_capacity(arch.head.len());
    let mut width = 2 * d;
    let mut feats: Option<Vec<f64>> = None;
    let head_layers = arch.head.len() + 1;
    let mut logits = Vec::new();
    for h in 0..head_layers {
        let is_out = h + 1 == head_layers;
        let w = params.weights(layer);
        let b = params.bias(layer);
        let out = if h == 0 {
            let outputs = b.len();
            let mut shifted = b.to_vec();
            for (c, &g) in global.iter().enumerate() {
                let wrow = &w[(d + c) * outputs..(d + c + 1) * outputs];
                for (s, &wv) in shifted.iter_mut().zip(wrow) {
                    *s += g * wv;
                }
            }
            dense(last, n, &w[..d * outputs], &shifted, !is_out)
        } else {
            dense(feats.as_deref().expect("previous head output"), n, w, b, !is_out)
        };
        check_finite(&out, layer)?;
        width = b.len();
        if is_out {
            logits = out;
        } else {
            head.push(out.clone());
            feats = Some(out);
        }
        layer += 1;
    }
    debug_assert_eq!(width, k);

    let (output, col_norms) = activate(&logits, n, k, mode);
    check_finite(&output, layer)?;

    let trace = ForwardTrace {
        arch: arch.clone(),
        mode,
        n,
        input,
        local,
        global,
        argmax,
        head,
        logits,
        col_norms,
        output: output.clone(),
    };
    Ok((
        Dictionary {
            matrix: DenseMatrix::from_raw(n, k, output),
            mode,
        },
        trace,
    ))
}

fn activate(logits: &[f64], n: usize, k: usize, mode: ConstraintMode) -> (Vec<f64>, Vec<f64>) {
    let mut out = logits.to_vec();
    match mode {
        ConstraintMode::Segmentation => {
            for row in out.chunks_mut(k) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                row.iter_mut().for_each(|v| *v /= s);
            }
            (out, Vec::new())
        }
        ConstraintMode::Keypoint => {
            for j in 0..k {
                let m = (0..n).map(|i| out[i * k + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for i in 0..n {
                    let e = (out[i * k + j] - m).exp();
                    out[i * k + j] = e;
                    s += e;
                }
                for i in 0..n {
                    out[i * k + j] /= s;
                }
            }
            (out, Vec::new())
        }
        ConstraintMode::SmoothMap => {
            let mut norms = vec![0.0; k];
            for row in out.chunks(k) {
                for (s, v) in norms.iter_mut().zip(row) {
                    *s += v * v;
                }
            }
            norms.iter_mut().for_each(|s| *s = s.sqrt());
            for row in out.chunks_mut(k) {
                for (v, &nrm) in row.iter_mut().zip(&norms) {
                    *v /= guarded(nrm);
                }
            }
            (out, norms)
        }
    }
}

fn guarded(norm: f64) -> f64 {
    if norm < NORM_GUARD {
        norm + NORM_GUARD
    } else {
        norm
    }
}

/// Backpropagates `dl_da` (gradient w.r.t. the dictionary) to the parameters.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, dl_da: &DenseMatrix) -> Result<Gradients> {
    let arch = &params.arch;
    if trace.arch != *arch {
        return Err(Error::InvalidState(
            "trace was produced by a different architecture".into(),
        ));
    }
    let (n, k) = (trace.n, arch.k);
    if dl_da.rows() != n || dl_da.cols() != k {
        return Err(Error::InvalidState(format!(
            "gradient is {}x{}, trace expects {n}x{k}",
            dl_da.rows(),
            dl_da.cols()
        )));
    }
    if !dl_da.is_finite() {
        return Err(Error::InvalidInput("non-finite dictionary gradient".into()));
    }

    let mut grads = params.zero_gradients();
    let mut dz = activation_backward(trace, dl_da.as_slice());

    let num_local = arch.local.len();
    let head_layers = arch.head.len() + 1;
    let d = arch.pooled_width();
    let last_local = &trace.local[num_local - 1];

    // Head layers, last to first.
    let mut layer = num_local + head_layers - 1;
    for h in (0..head_layers).rev() {
        let slot = params.slots[layer];
        let outputs = slot.outputs;
        let w = params.weights(layer);
        let g = &mut grads.0;
        let (gw, gb) = g[slot.weights..slot.bias + outputs].split_at_mut(slot.bias - slot.weights);
        for r in 0..n {
            for (acc, &v) in gb.iter_mut().zip(&dz[r * outputs..(r + 1) * outputs]) {
                *acc += v;
            }
        }
        if h == 0 {
            // Point half of the concatenated input.
            accumulate_weight_grad(last_local, n, d, &dz, outputs, &mut gw[..d * outputs]);
            // Global half: the same feature on every row.
            let colsum: Vec<f64> = gb.to_vec();
            for (c, &gv) in trace.global.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let row = &mut gw[(d + c) * outputs..(d + c + 1) * outputs];
                for (acc, &s) in row.iter_mut().zip(&colsum) {
                    *acc += gv * s;
                }
            }
            let mut d_local = input_grad(&dz, n, &w[..d * outputs], d, outputs, Some(last_local));
            for (c, &winner) in trace.argmax.iter().enumerate() {
                if trace.global[c] <= 0.0 {
                    continue;
                }
                let wrow = &w[(d + c) * outputs..(d + c + 1) * outputs];
                let dg: f64 = wrow.iter().zip(&colsum).map(|(a, b)| a * b).sum();
                d_local[winner * d + c] += dg;
            }
            dz = d_local;
        } else {
            let input = &trace.head[h - 1];
            accumulate_weight_grad(input, n, slot.inputs, &dz, outputs, gw);
            dz = input_grad(&dz, n, w, slot.inputs, outputs, Some(input));
        }
        layer = layer.wrapping_sub(1);
    }

    // Local layers, last to first. `dz` holds the gradient w.r.t. layer output.
    for l in (0..num_local).rev() {
        let slot = params.slots[l];
        let outputs = slot.outputs;
        let out = &trace.local[l];
        for (g, &o) in dz.iter_mut().zip(out) {
            if o <= 0.0 {
                *g = 0.0;
            }
        }
        let g = &mut grads.0;
        let (gw, gb) = g[slot.weights..slot.bias + outputs].split_at_mut(slot.bias - slot.weights);
        for r in 0..n {
            for (acc, &v) in gb.iter_mut().zip(&dz[r * outputs..(r + 1) * outputs]) {
                *acc += v;
            }
        }
        let input: &[f64] = if l == 0 { &trace.input } else { &trace.local[l - 1] };
        accumulate_weight_grad(input, n, slot.inputs, &dz, outputs, gw);
        if l > 0 {
            dz = input_grad(&dz, n, params.weights(l), slot.inputs, outputs, Some(input));
        }
    }
    Ok(grads)
}

/// Gradient w.r.t. the logits given the gradient w.r.t. the activated output.
fn activation_backward(trace: &ForwardTrace, da: &[f64]) -> Vec<f64> {
    let (n, k) = (trace.n, trace.arch.k);
    let a = &trace.output;
    let mut dz = vec![0.0; n * k];
    match trace.mode {
        ConstraintMode::Segmentation => {
            for i in 0..n {
                let (ar, dr) = (&a[i * k..(i + 1) * k], &da[i * k..(i + 1) * k]);
                let dot: f64 = ar.iter().zip(dr).map(|(x, y)| x * y).sum();
                for j in 0..k {
                    dz[i * k + j] = ar[j] * (dr[j] - dot);
                }
            }
        }
        ConstraintMode::Keypoint => {
            for j in 0..k {
                let dot: f64 = (0..n).map(|i| a[i * k + j] * da[i * k + j]).sum();
                for i in 0..n {
                    dz[i * k + j] = a[i * k + j] * (da[i * k + j] - dot);
                }
            }
        }
        ConstraintMode::SmoothMap => {
            // a = z / g(‖z‖); da/dz = I/g - z zᵀ / (‖z‖ g²).
            for j in 0..k {
                let nrm = trace.col_norms[j];
                let denom = guarded(nrm);
                let zdot: f64 = (0..n).map(|i| trace.logits[i * k + j] * da[i * k + j]).sum();
                let coef = if nrm > 0.0 { zdot / (nrm * denom * denom) } else { 0.0 };
                for i in 0..n {
                    dz[i * k + j] = da[i * k + j] / denom - coef * trace.logits[i * k + j];
                }
            }
        }
    }
    // The output layer has no ReLU; hidden head layers are masked by the caller.
    dz
}

/// `gw += inputᵀ · dz`.
fn accumulate_weight_grad(input: &[f64], n: usize, inputs: usize, dz: &[f64], outputs: usize, gw: &mut [f64]) {
    for r in 0..n {
        let drow = &dz[r * outputs..(r + 1) * outputs];
        for (i, &x) in input[r * inputs..(r + 1) * inputs].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let grow = &mut gw[i * outputs..(i + 1) * outputs];
            for (g, &d) in grow.iter_mut().zip(drow) {
                *g += x * d;
            }
        }
    }
}

/// `dz · Wᵀ`, masked by the ReLU of the (post-activation) `input` when given.
fn input_grad(dz: &[f64], n: usize, w: &[f64], inputs: usize, outputs: usize, relu_out: Option<&[f64]>) -> Vec<f64> {
    let mut dx = vec![0.0; n * inputs];
    for r in 0..n {
        let drow = &dz[r * outputs..(r + 1) * outputs];
        for i in 0..inputs {
            if let Some(act) = relu_out {
                if act[r * inputs + i] <= 0.0 {
                    continue;
                }
            }
            let wrow = &w[i * outputs..(i + 1) * outputs];
            dx[r * inputs + i] = wrow.iter().zip(drow).map(|(a, b)| a * b).sum();
        }
    }
    dx
}
