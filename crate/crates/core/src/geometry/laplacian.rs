use rand_distr::{Distribution, StandardNormal};

use super::cloud::{distance_sq, PointCloud};
use super::probe::{ProbeFunction, ProbeKind};
use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, DenseMatrix, RngStream};

const MAX_POINTS: usize = 1024;
/// Neighborhood size used when a caller does not choose one.
pub const DEFAULT_KNN: usize = 8;

/// `L = D - W` for the symmetrized unit-weight K-nearest-neighbor graph of a cloud.
#[derive(Debug, Clone)]
pub struct GraphLaplacian {
    pub matrix: DenseMatrix,
    pub components: usize,
}

impl GraphLaplacian {
    pub fn is_connected(&self) -> bool {
        self.components == 1
    }

    /// Adjacency weight between `i` and `j` (off-diagonal only).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            -self.matrix[(i, j)]
        }
    }
}

pub fn knn_graph_laplacian(cloud: &PointCloud, k: usize) -> Result<GraphLaplacian> {
    let n = cloud.len();
    if n > MAX_POINTS {
        return Err(Error::InvalidConfig(format!(
            "graph Laplacian limited to {MAX_POINTS} points, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "neighbor count {k} must lie in 1..{n}"
        )));
    }
    let mut adj = vec![false; n * n];
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (distance_sq(&cloud.points[i], &cloud.points[j]), j)),
        );
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(k) {
            adj[i * n + j] = true;
            adj[j * n + i] = true;
        }
    }

    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            if adj[i * n + j] {
                l[(i, j)] = -1.0;
                degree += 1.0;
            }
        }
        l[(i, i)] = degree;
    }
    Ok(GraphLaplacian {
        matrix: l,
        components: count_components(&adj, n),
    })
}

fn count_components(adj: &[bool], n: usize) -> usize {
    let mut seen = vec![false; n];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if adj[i * n + j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

/// The lowest-frequency Laplacian eigenvectors of a cloud (constant one included).
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    /// `n x m`, columns are orthonormal eigenvectors in ascending eigenvalue order.
    pub basis: DenseMatrix,
    pub warnings: Vec<String>,
}

impl SpectralBasis {
    pub fn from_cloud(cloud: &PointCloud, k: usize, num_bases: usize) -> Result<Self> {
        let n = cloud.len();
        if num_bases == 0 || num_bases > n {
            return Err(Error::InvalidConfig(format!(
                "number of bases {num_bases} must lie in 1..={n}"
            )));
        }
        let lap = knn_graph_laplacian(cloud, k)?;
        let mut warnings = Vec::new();
        if !lap.is_connected() {
            warnings.push(format!(
                "k-NN graph (K={k}) has {} components; low eigenvectors include component indicators",
                lap.components
            ));
        }
        let eig = sym_eigen(&lap.matrix)?;
        let mut basis = DenseMatrix::zeros(n, num_bases);
        for i in 0..n {
            for j in 0..num_bases {
                basis[(i, j)] = eig.vectors[(i, j)];
            }
        }
        Ok(Self {
            eigenvalues: eig.values[..num_bases].to_vec(),
            basis,
            warnings,
        })
    }

    /// `Φc / ‖Φc‖` for standard normal `c`.
    pub fn random_function(&self, rng: &mut RngStream) -> ProbeFunction {
        let coeffs: Vec<f64> = (0..self.basis.cols())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let mut values = self.basis.matvec(&coeffs);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        ProbeFunction {
            values,
            kind: ProbeKind::Smooth,
        }
    }
}

/// Random unit-norm combination of the first `num_bases` Laplacian eigenvectors,
/// with any graph warnings.
pub fn random_smooth_function(
    cloud: &PointCloud,
    num_bases: usize,
    rng: &mut RngStream,
) -> Result<(ProbeFunction, Vec<String>)> {
    let basis = SpectralBasis::from_cloud(cloud, DEFAULT_KNN.min(cloud.len().saturating_sub(1)), num_bases)?;
    Ok((basis.random_function(rng), basis.warnings))
}
