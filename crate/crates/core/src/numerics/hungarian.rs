use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

/// A maximum-profit matching between matrix rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `mapping[row]` is the matched column, or `None` if the row was matched to padding.
    pub mapping: Vec<Option<usize>>,
    pub total_profit: f64,
}

impl Assignment {
    /// Matched `(row, col)` pairs in row order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mapping
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Maximum-profit assignment.
///
/// Rectangular inputs are padded to square with zero-profit entries, so exactly
/// `min(rows, cols)` real pairs are returned.
pub fn hungarian_max(profit: &DenseMatrix) -> Result<Assignment> {
    let (r, c) = (profit.rows(), profit.cols());
    if r == 0 || c == 0 {
        return Err(Error::InvalidInput("empty profit matrix".into()));
    }
    if !profit.is_finite() {
        return Err(Error::InvalidInput("non-finite profit entry".into()));
    }
    let n = r.max(c);
    let mut cost = vec![0.0; n * n];
    for i in 0..r {
        for j in 0..c {
            cost[i * n + j] = -profit[(i, j)];
        }
    }
    let col_of_row = min_cost_square(&cost, n);

    let mut mapping = vec![None; r];
    let mut total_profit = 0.0;
    for (i, slot) in mapping.iter_mut().enumerate() {
        let j = col_of_row[i];
        if j < c {
            *slot = Some(j);
            total_profit += profit[(i, j)];
        }
    }
    Ok(Assignment {
        mapping,
        total_profit,
    })
}

/// Shortest augmenting path Hungarian method on an `n x n` cost matrix.
/// Returns the column assigned to each row.
fn min_cost_square(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Exhaustive optimum over injective row->column maps of a matrix padded to square.
    fn brute_force(m: &DenseMatrix) -> f64 {
        let n = m.rows().max(m.cols());
        permutations(n)
            .iter()
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .filter(|&(i, &j)| i < m.rows() && j < m.cols())
                    .map(|(i, &j)| m[(i, j)])
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> DenseMatrix {
        let v = (0..r * c).map(|_| rng.random::<f64>()).collect();
        DenseMatrix::from_vec(r, c, v).unwrap()
    }

    #[test]
    fn diagonal_dominant() {
        let m = DenseMatrix::from_rows(&[
            vec![5.0, 1.0, 1.0],
            vec![1.0, 5.0, 1.0],
            vec![1.0, 1.0, 5.0],
        ])
        .unwrap();
        let a = hungarian_max(&m).unwrap();
        assert_eq!(a.mapping, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(a.total_profit, 15.0);
    }

    #[test]
    fn anti_diagonal() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a = hungarian_max(&m).unwrap();
        assert_eq!(a.mapping, vec![Some(1), Some(0)]);
        assert_eq!(a.total_profit, 2.0);
    }

    #[test]
    fn seeded_6x6_matches_enumeration() {
        let mut rng = RngStream::new(2024).substream("hungarian-6x6");
        let m = random_matrix(&mut rng, 6, 6);
        let a = hungarian_max(&m).unwrap();
        assert!((a.total_profit - brute_force(&m)).abs() < 1e-12);
    }

    #[test]
    fn rectangular_pads_with_zero() {
        let wide = DenseMatrix::from_rows(&[vec![0.2, 0.9, 0.1]]).unwrap();
        let a = hungarian_max(&wide).unwrap();
        assert_eq!(a.mapping, vec![Some(1)]);

        let tall = DenseMatrix::from_rows(&[vec![0.3], vec![0.8], vec![0.5]]).unwrap();
        let a = hungarian_max(&tall).unwrap();
        assert_eq!(a.mapping, vec![None, Some(0), None]);
        assert_eq!(a.total_profit, 0.8);
        assert_eq!(a.pairs().collect::<Vec<_>>(), vec![(1, 0)]);
    }

    #[test]
    fn rejects_non_finite() {
        let m = DenseMatrix::from_raw(1, 2, vec![1.0, f64::INFINITY]);
        assert!(matches!(hungarian_max(&m), Err(Error::InvalidInput(_))));
        assert!(hungarian_max(&DenseMatrix::zeros(0, 3)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_brute_force(seed in any::<u64>(), r in 1usize..=7, c in 1usize..=7) {
            let mut rng = RngStream::new(seed);
            let m = random_matrix(&mut rng, r, c);
            let a = hungarian_max(&m).unwrap();
            prop_assert!((a.total_profit - brute_force(&m)).abs() < 1e-9);
            let used: std::collections::HashSet<_> = a.pairs().map(|(_, c)| c).collect();
            prop_assert_eq!(used.len(), r.min(c));
            let recomputed: f64 = a.pairs().map(|(i, j)| m[(i, j)]).sum();
            prop_assert!((recomputed - a.total_profit).abs() < 1e-12);
        }

        #[test]
        fn invariant_to_row_and_column_shifts(
            seed in any::<u64>(), n in 1usize..=6, row in 0usize..6, col in 0usize..6, shift in -3.0f64..3.0
        ) {
            let mut rng = RngStream::new(seed);
            let m = random_matrix(&mut rng, n, n);
            let base = hungarian_max(&m).unwrap();
            let mut shifted = m.clone();
            for j in 0..n {
                shifted[(row % n, j)] += shift;
            }
            for i in 0..n {
                shifted[(i, col % n)] -= shift;
            }
            let moved = hungarian_max(&shifted).unwrap();
            // Both assignments are optimal for the shifted problem (ties aside).
            let on_shifted = |a: &Assignment| a.pairs().map(|(i, j)| shifted[(i, j)]).sum::<f64>();
            prop_assert!((on_shifted(&base) - on_shifted(&moved)).abs() < 1e-9);
        }
    }
}
