use super::DenseMatrix;
use crate::error::{Error, Result};

const MAX_DIM: usize = 1024;
const MAX_SWEEPS: usize = 100;
const OFF_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigen decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: DenseMatrix,
    pub sweeps: usize,
}

impl SymEigen {
    /// Column `j` of the eigenvector matrix.
    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.col(j)
    }
}

/// Cyclic Jacobi eigen decomposition.
///
/// Sweeps until the off-diagonal Frobenius norm falls below `1e-12` relative to
/// the input norm, or 100 sweeps. Eigenvalues come out ascending and each
/// eigenvector's first non-negligible component is made positive.
pub fn sym_eigen(s: &DenseMatrix) -> Result<SymEigen> {
    if !s.is_square() {
        return Err(Error::InvalidInput(format!(
            "eigen decomposition needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let m = s.rows();
    if m == 0 || m > MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "matrix dimension {m} outside 1..={MAX_DIM}"
        )));
    }
    if !s.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let asym = s.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max |s_ij - s_ji| = {asym:e})"
        )));
    }

    // Symmetrize exactly so row and column updates stay consistent.
    let mut a = s.clone();
    for i in 0..m {
        for j in (i + 1)..m {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    // Row p of `vt` is the eigenvector being accumulated for diagonal slot p.
    let mut vt = DenseMatrix::identity(m);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        if off_norm(&a) <= OFF_TOL * scale {
            break;
        }
        sweeps += 1;
        for p in 0..m {
            for q in (p + 1)..m {
                rotate(&mut a, &mut vt, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(m, m);
    for (col, &src) in order.iter().enumerate() {
        let v = vt.row(src);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |&x| x.signum());
        for (i, &x) in v.iter().enumerate() {
            vectors[(i, col)] = sign * x;
        }
    }

    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

fn off_norm(a: &DenseMatrix) -> f64 {
    let m = a.rows();
    let mut acc = 0.0;
    for i in 0..m {
        for (j, &x) in a.row(i).iter().enumerate() {
            if i != j {
                acc += x * x;
            }
        }
    }
    acc.sqrt()
}

fn rotate(a: &mut DenseMatrix, vt: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let g = 100.0 * apq.abs();
    if app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
        // Below rounding of both diagonal entries.
        a[(p, q)] = 0.0;
        a[(q, p)] = 0.0;
        return;
    }
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);

    let m = a.rows();
    for k in 0..m {
        if k == p || k == q {
            continue;
        }
        let akp = a[(p, k)];
        let akq = a[(q, k)];
        let new_p = akp - s * (akq + tau * akp);
        let new_q = akq + s * (akp - tau * akq);
        a[(p, k)] = new_p;
        a[(k, p)] = new_p;
        a[(q, k)] = new_q;
        a[(k, q)] = new_q;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    let cols = vt.cols();
    let data = vt.as_mut_slice();
    let (lo, hi) = data.split_at_mut(q * cols);
    let row_p = &mut lo[p * cols..(p + 1) * cols];
    let row_q = &mut hi[..cols];
    for (vp, vq) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let (xp, xq) = (*vp, *vq);
        *vp = xp - s * (xq + tau * xp);
        *vq = xq + s * (xp - tau * xq);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand::Rng;

    fn reconstruct(e: &SymEigen) -> DenseMatrix {
        let m = e.values.len();
        let mut out = DenseMatrix::zeros(m, m);
        for (j, &lambda) in e.values.iter().enumerate() {
            for r in 0..m {
                for c in 0..m {
                    out[(r, c)] += lambda * e.vectors[(r, j)] * e.vectors[(c, j)];
                }
            }
        }
        out
    }

    fn orthonormality_error(v: &DenseMatrix) -> f64 {
        let g = v.gram();
        let m = g.rows();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    fn random_symmetric(seed: u64, m: usize) -> DenseMatrix {
        let mut rng = RngStream::new(seed);
        let mut s = DenseMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v: f64 = rng.random_range(-1.0..1.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    #[test]
    fn diagonal_input() {
        let mut d = DenseMatrix::zeros(3, 3);
        d[(0, 0)] = 3.0;
        d[(1, 1)] = 1.0;
        d[(2, 2)] = 2.0;
        let e = sym_eigen(&d).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(e.vector(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(e.vector(2), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn analytic_two_by_two() {
        let s = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigen(&s).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        assert!((v0[0] - h).abs() < 1e-14 && (v0[1] + h).abs() < 1e-14);
        assert!((v1[0] - h).abs() < 1e-14 && (v1[1] - h).abs() < 1e-14);
    }

    #[test]
    fn random_8x8_reconstructs() {
        let s = random_symmetric(8, 8);
        let e = sym_eigen(&s).unwrap();
        let mut diff = reconstruct(&e);
        for i in 0..8 {
            for j in 0..8 {
                diff[(i, j)] -= s[(i, j)];
            }
        }
        assert!(diff.frobenius_norm() < 1e-9);
        assert!(orthonormality_error(&e.vectors) < 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn larger_matrix_meets_tolerances() {
        let s = random_symmetric(99, 60);
        let e = sym_eigen(&s).unwrap();
        let mut diff = reconstruct(&e);
        for i in 0..60 {
            for j in 0..60 {
                diff[(i, j)] -= s[(i, j)];
            }
        }
        assert!(diff.frobenius_norm() / s.frobenius_norm() < 1e-8);
        assert!(orthonormality_error(&e.vectors) < 1e-8);
        for j in 0..60 {
            let v = e.vector(j);
            let first = v.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let s = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&s), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn deterministic() {
        let s = random_symmetric(5, 12);
        let a = sym_eigen(&s).unwrap();
        let b = sym_eigen(&s).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.vectors, b.vectors);
    }
}
