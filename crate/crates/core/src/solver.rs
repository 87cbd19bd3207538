//! Inner least-squares problems for the combination weights.
//!
//! The box-constrained problems are solved by accelerated projected gradient
//! (step `1/L`, `L` from power iteration on `AᵀA`, momentum restart when the
//! objective rises), followed by an exact solve on the detected free set
//! whenever that solve is feasible and improves the KKT residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

const MAX_ITERATIONS: usize = 10_000;
const KKT_TOL: f64 = 1e-8;
const POWER_ITERATIONS: usize = 50;

/// Combination weights over the dictionary atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// `‖Ax − f‖²` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest KKT violation scaled by `1 + ‖AᵀAx − Aᵀf‖∞`.
    pub kkt_violation: f64,
}

/// Bounds and starting point for a bounded least-squares solve.
#[derive(Debug, Clone)]
pub struct BoxLsSolver {
    pub lower: f64,
    pub upper: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for BoxLsSolver {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
            max_iterations: MAX_ITERATIONS,
            tolerance: KKT_TOL,
        }
    }
}

/// `xᵀQx − 2cᵀx + const` in the normal-equation form shared by all solves.
struct Quadratic {
    q: DenseMatrix,
    c: Vec<f64>,
}

impl Quadratic {
    fn from_terms(terms: &[(&DenseMatrix, &[f64])]) -> Result<Self> {
        let k = terms[0].0.cols();
        let mut q = DenseMatrix::zeros(k, k);
        let mut c = vec![0.0; k];
        for (a, f) in terms {
            check_problem(a, f)?;
            if a.cols() != k {
                return Err(Error::InvalidInput(format!(
                    "dictionaries disagree on atom count ({} vs {k})",
                    a.cols()
                )));
            }
            let g = a.gram();
            for (dst, src) in q.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *dst += src;
            }
            for (dst, src) in c.iter_mut().zip(a.tr_matvec(f)) {
                *dst += src;
            }
        }
        Ok(Self { q, c })
    }

    fn k(&self) -> usize {
        self.c.len()
    }

    /// `Qx − c`, half the objective gradient.
    fn half_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.q.matvec(x);
        for (gi, ci) in g.iter_mut().zip(&self.c) {
            *gi -= ci;
        }
        g
    }

    /// Objective without the constant `‖f‖²`.
    fn value(&self, x: &[f64]) -> f64 {
        let qx = self.q.matvec(x);
        x.iter()
            .zip(&qx)
            .zip(&self.c)
            .map(|((xi, qi), ci)| xi * qi - 2.0 * ci * xi)
            .sum()
    }

    fn lipschitz(&self) -> f64 {
        let k = self.k();
        let mut v = vec![1.0 / (k as f64).sqrt(); k];
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let w = self.q.matvec(&v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        // Power iteration approaches from below; the trace bounds it from above.
        let trace: f64 = (0..k).map(|i| self.q[(i, i)]).sum();
        (lambda * 1.01).min(trace).max(lambda)
    }
}

fn check_problem(a: &DenseMatrix, f: &[f64]) -> Result<()> {
    if a.rows() != f.len() {
        return Err(Error::InvalidInput(format!(
            "dictionary has {} rows, target has {} entries",
            a.rows(),
            f.len()
        )));
    }
    if a.cols() == 0 {
        return Err(Error::InvalidInput("dictionary has no atoms".into()));
    }
    if !a.is_finite() || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite dictionary or target".into()));
    }
    Ok(())
}

fn residual(a: &DenseMatrix, x: &[f64], f: &[f64]) -> f64 {
    a.matvec(x)
        .iter()
        .zip(f)
        .map(|(p, t)| (p - t) * (p - t))
        .sum()
}

impl BoxLsSolver {
    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            ..Self::default()
        }
    }

    fn project(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = v.clamp(self.lower, self.upper));
    }

    fn kkt(&self, quad: &Quadratic, x: &[f64]) -> f64 {
        let g = quad.half_grad(x);
        let scale = 1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = x
            .iter()
            .zip(&g)
            .map(|(&xi, &gi)| {
                if xi <= self.lower {
                    (-gi).max(0.0)
                } else if xi >= self.upper {
                    gi.max(0.0)
                } else {
                    gi.abs()
                }
            })
            .fold(0.0, f64::max);
        worst / scale
    }

    /// Solves `min ‖Ax − f‖²` over the box, starting from `x0` (projected) or zero.
    pub fn solve(
        &self,
        a: &DenseMatrix,
        f: &[f64],
        x0: Option<&[f64]>,
    ) -> Result<(CoefficientVector, SolveReport)> {
        let quad = Quadratic::from_terms(&[(a, f)])?;
        let (x, iterations, kkt) = self.minimize(&quad, x0)?;
        let report = SolveReport {
            residual: residual(a, &x, f),
            iterations,
            converged: kkt < self.tolerance,
            kkt_violation: kkt,
        };
        Ok((CoefficientVector(x), report))
    }

    fn minimize(&self, quad: &Quadratic, x0: Option<&[f64]>) -> Result<(Vec<f64>, usize, f64)> {
        if self.lower > self.upper {
            return Err(Error::InvalidConfig("lower bound above upper bound".into()));
        }
        let k = quad.k();
        let mut x = match x0 {
            Some(v) if v.len() == k => v.to_vec(),
            Some(v) => {
                return Err(Error::InvalidInput(format!(
                    "initial point has {} entries, expected {k}",
                    v.len()
                )))
            }
            None => vec![0.0f64.clamp(self.lower, self.upper); k],
        };
        self.project(&mut x);

        let lip = quad.lipschitz();
        if lip <= f64::MIN_POSITIVE {
            // AᵀA = 0: every feasible point is optimal.
            let kkt = self.kkt(quad, &x);
            return Ok((x, 0, kkt));
        }
        let step = 1.0 / lip;

        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut value = quad.value(&x);
        let mut kkt = self.kkt(quad, &x);
        let mut iterations = 0;
        while kkt >= self.tolerance && iterations < self.max_iterations {
            iterations += 1;
            let g = quad.half_grad(&y);
            let mut next: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
            self.project(&mut next);
            let next_value = quad.value(&next);
            if next_value > value {
                // Restart momentum from the last accepted iterate.
                t = 1.0;
                y.clone_from(&x);
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = next
                .iter()
                .zip(&x)
                .map(|(n, o)| n + beta * (n - o))
                .collect();
            x = next;
            t = t_next;
            value = next_value;
            kkt = self.kkt(quad, &x);

            if iterations % 20 == 0 || kkt < 1e-4 {
                if let Some((polished, pk)) = self.polish(quad, &x) {
                    if pk < kkt && quad.value(&polished) <= value + 1e-12 * (1.0 + value.abs()) {
                        x = polished;
                        value = quad.value(&x);
                        kkt = pk;
                        y.clone_from(&x);
                        t = 1.0;
                    }
                }
            }
        }
        Ok((x, iterations, kkt))
    }

    /// Exact minimizer with the bound-active coordinates of `x` held fixed.
    fn polish(&self, quad: &Quadratic, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        let k = quad.k();
        let free: Vec<usize> = (0..k)
            .filter(|&j| x[j] > self.lower && x[j] < self.upper)
            .collect();
        let mut out = x.to_vec();
        if !free.is_empty() {
            let m = free.len();
            let mut sub = DenseMatrix::zeros(m, m);
            let mut rhs = vec![0.0; m];
            for (a, &i) in free.iter().enumerate() {
                rhs[a] = quad.c[i];
                for j in 0..k {
                    if !free.contains(&j) {
                        rhs[a] -= quad.q[(i, j)] * x[j];
                    }
                }
                for (b, &j) in free.iter().enumerate() {
                    sub[(a, b)] = quad.q[(i, j)];
                }
            }
            let sol = cholesky_solve(&sub, &rhs).ok()?;
            for (&i, v) in free.iter().zip(sol) {
                if v < self.lower || v > self.upper || !v.is_finite() {
                    return None;
                }
                out[i] = v;
            }
        }
        let kkt = self.kkt(quad, &out);
        Some((out, kkt))
    }
}

/// Solves `Sx = b` for symmetric positive definite `S`.
fn cholesky_solve(s: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let m = s.rows();
    let scale = (0..m).map(|i| s[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let mut sum = s[(i, j)];
            for p in 0..j {
                sum -= l[(i, p)] * l[(j, p)];
            }
            if i == j {
                if sum <= 1e-14 * scale.max(f64::MIN_POSITIVE) || !sum.is_finite() {
                    return Err(Error::Solver(format!(
                        "matrix is numerically singular (pivot {sum:e} at {i})"
                    )));
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut sum = b[i];
        for p in 0..i {
            sum -= l[(i, p)] * y[p];
        }
        y[i] = sum / l[(i, i)];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut sum = y[i];
        for p in (i + 1)..m {
            sum -= l[(p, i)] * x[p];
        }
        x[i] = sum / l[(i, i)];
    }
    Ok(x)
}

/// `argmin_{x ∈ [0,1]^k} ‖Ax − f‖²`.
pub fn solve_box_ls(a: &DenseMatrix, f: &[f64]) -> Result<(CoefficientVector, SolveReport)> {
    BoxLsSolver::default().solve(a, f, None)
}

/// `(AᵀA + eps·I)⁻¹ Aᵀf`.
pub fn solve_ridge_ls(a: &DenseMatrix, f: &[f64], eps: f64) -> Result<CoefficientVector> {
    check_problem(a, f)?;
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidConfig(format!("ridge eps must be non-negative, got {eps}")));
    }
    let mut g = a.gram();
    for i in 0..g.rows() {
        g[(i, i)] += eps;
    }
    Ok(CoefficientVector(cholesky_solve(&g, &a.tr_matvec(f))?))
}

/// One `x ∈ [0,1]^k` shared by two problems: `min ‖A₁x − f₁‖² + ‖A₂x − f₂‖²`.
/// The reported residual is the sum of both.
pub fn solve_shared_box_ls(
    a1: &DenseMatrix,
    f1: &[f64],
    a2: &DenseMatrix,
    f2: &[f64],
) -> Result<(CoefficientVector, SolveReport)> {
    let quad = Quadratic::from_terms(&[(a1, f1), (a2, f2)])?;
    let solver = BoxLsSolver::default();
    let (x, iterations, kkt) = solver.minimize(&quad, None)?;
    let report = SolveReport {
        residual: residual(a1, &x, f1) + residual(a2, &x, f2),
        iterations,
        converged: kkt < solver.tolerance,
        kkt_violation: kkt,
    };
    Ok((CoefficientVector(x), report))
}
