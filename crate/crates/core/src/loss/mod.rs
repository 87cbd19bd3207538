//! Projection loss with ℓ2,1 regularization and the alternating training step.

mod train;

pub use train::{
    batch_loss, pair_gradient, sample_gradient, train_step, train_step_siamese, PairSample, ProbeSampler, StepMetrics, TrainConfig,
    TrainSample, Trainer,
};

use crate::numerics::DenseMatrix;

/// Column norms below this are treated as zero in the ℓ2,1 subgradient.
pub const L21_GUARD: f64 = 1e-9;

/// Sum of the Euclidean norms of the columns of `a`.
pub fn l21_norm(a: &DenseMatrix) -> f64 {
    a.column_norms().iter().sum()
}

/// `‖Ax − f‖²`.
pub fn projection_error(a: &DenseMatrix, x: &[f64], f: &[f64]) -> f64 {
    a.matvec(x)
        .iter()
        .zip(f)
        .map(|(p, t)| (p - t) * (p - t))
        .sum()
}

/// `‖Ax − f‖² + γ‖A‖₂,₁`.
pub fn loss_value(a: &DenseMatrix, x: &[f64], f: &[f64], gamma: f64) -> f64 {
    projection_error(a, x, f) + gamma * l21_norm(a)
}

/// Gradient of [`loss_value`] in `A` with `x` held fixed:
/// `2(Ax − f)xᵀ + γ·[a_j / max(‖a_j‖, 1e-9)]_j`.
pub fn grad_wrt_a(a: &DenseMatrix, x: &[f64], f: &[f64], gamma: f64) -> DenseMatrix {
    let (n, k) = (a.rows(), a.cols());
    let r: Vec<f64> = a.matvec(x).iter().zip(f).map(|(p, t)| 2.0 * (p - t)).collect();
    let mut g = DenseMatrix::zeros(n, k);
    for (i, &ri) in r.iter().enumerate() {
        for (gij, &xj) in g.row_mut(i).iter_mut().zip(x) {
            *gij = ri * xj;
        }
    }
    if gamma != 0.0 {
        let inv: Vec<f64> = a
            .column_norms()
            .into_iter()
            .map(|nrm| gamma / nrm.max(L21_GUARD))
            .collect();
        for i in 0..n {
            let arow = a.row(i).to_vec();
            for ((gij, aij), s) in g.row_mut(i).iter_mut().zip(arow).zip(&inv) {
                *gij += aij * s;
            }
        }
    }
    g
}
