use super::DiscreteOperator;
use crate::error::{Error, Result};

/// Direct Cholesky factorization `A = L L^T` in envelope (skyline) storage.
///
/// The structured grids produced here have small bandwidth under the
/// natural lexicographic ordering, so the envelope of `L` equals the
/// envelope of `A` and no symbolic analysis is needed. The factorization
/// is computed once and reused across arbitrarily many solves; `solve` is
/// reentrant and does not mutate the factor.
pub struct Factorization {
    dim: usize,
    /// first stored column of each row of L
    first_col: Vec<usize>,
    /// packed rows of L: row i occupies columns first_col[i]..=i
    rows: Vec<f64>,
    row_start: Vec<usize>,
    self_adjoint: bool,
}

/// Factor a symmetric positive definite operator.
///
/// A nonpositive pivot aborts with [`Error::Definiteness`]; for the
/// bilinear problem this is the signal that `A + M(u)` has lost
/// definiteness for the current control.
pub fn factorize(op: &DiscreteOperator) -> Result<Factorization> {
    let dim = op.dim();
    let mut first_col = vec![0usize; dim];
    for r in 0..dim {
        let (cols, _) = op.row(r);
        let fc = cols.iter().copied().find(|&c| c <= r).unwrap_or(r).min(r);
        first_col[r] = fc;
    }
    // envelope must be monotone for the factor: widen rows so that the
    // column reach of previous rows is respected (standard skyline rule:
    // L has fill only inside the row envelope, which is already monotone
    // for our matrices; enforce it anyway)
    let mut row_start = vec![0usize; dim + 1];
    for r in 0..dim {
        row_start[r + 1] = row_start[r] + (r - first_col[r] + 1);
    }
    let mut rows = vec![0.0f64; row_start[dim]];
    // scatter the lower triangle of A into the envelope
    for r in 0..dim {
        let (cols, vals) = op.row(r);
        for (c, v) in cols.iter().zip(vals) {
            if *c <= r {
                debug_assert!(*c >= first_col[r]);
                rows[row_start[r] + (c - first_col[r])] = *v;
            }
        }
    }

    // in-place envelope Cholesky
    for i in 0..dim {
        let fi = first_col[i];
        for j in fi..i {
            let fj = first_col[j];
            let lo = fi.max(fj);
            let mut s = rows[row_start[i] + (j - fi)];
            // dot of row i and row j over columns lo..j
            let oi = row_start[i] + (lo - fi);
            let oj = row_start[j] + (lo - fj);
            let len = j - lo;
            let (ri, rj) = (&rows[oi..oi + len], &rows[oj..oj + len]);
            let mut dot = 0.0;
            for k in 0..len {
                dot += ri[k] * rj[k];
            }
            s -= dot;
            let diag_j = rows[row_start[j] + (j - fj)];
            rows[row_start[i] + (j - fi)] = s / diag_j;
        }
        let mut d = rows[row_start[i] + (i - fi)];
        let oi = row_start[i];
        for k in 0..(i - fi) {
            d -= rows[oi + k] * rows[oi + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Definiteness { row: i, pivot: d });
        }
        rows[row_start[i] + (i - fi)] = d.sqrt();
    }

    Ok(Factorization {
        dim,
        first_col,
        rows,
        row_start,
        self_adjoint: true,
    })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn self_adjoint(&self) -> bool {
        self.self_adjoint
    }

    /// Solve `A x = rhs` by forward/backward substitution.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim);
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        // forward: L y = rhs
        for i in 0..self.dim {
            let fi = self.first_col[i];
            let o = self.row_start[i];
            let mut s = x[i];
            for (k, j) in (fi..i).enumerate() {
                s -= self.rows[o + k] * x[j];
            }
            x[i] = s / self.rows[o + (i - fi)];
        }
        // backward: L^T x = y, column sweep
        for i in (0..self.dim).rev() {
            let fi = self.first_col[i];
            let o = self.row_start[i];
            let xi = x[i] / self.rows[o + (i - fi)];
            x[i] = xi;
            for (k, j) in (fi..i).enumerate() {
                x[j] -= self.rows[o + k] * xi;
            }
        }
    }

    /// `y = L x` (used to draw correlated samples from a mass factor).
    pub fn factor_apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let fi = self.first_col[i];
            let o = self.row_start[i];
            let mut s = 0.0;
            for (k, j) in (fi..=i).enumerate() {
                s += self.rows[o + k] * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// `y = L^T x`.
    pub fn factor_transpose_apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let fi = self.first_col[i];
            let o = self.row_start[i];
            for (k, j) in (fi..=i).enumerate() {
                y[j] += self.rows[o + k] * x[i];
            }
        }
        y
    }

    /// Solve `L z = x` only (half solve, for whitened coordinates).
    pub fn forward_solve(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        for i in 0..self.dim {
            let fi = self.first_col[i];
            let o = self.row_start[i];
            let mut s = z[i];
            for (k, j) in (fi..i).enumerate() {
                s -= self.rows[o + k] * z[j];
            }
            z[i] = s / self.rows[o + (i - fi)];
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, identity_scaled, ProblemKind};
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_scaled_solve() {
        let op = identity_scaled(7, 4.0);
        let fac = factorize(&op).unwrap();
        let rhs: Vec<f64> = (0..7).map(|i| i as f64 + 1.0).collect();
        let x = fac.solve(&rhs);
        for i in 0..7 {
            assert!((x[i] - rhs[i] / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_spd_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dim = 5;
            let m = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
            let spd = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.5;
            let mut triplets = Vec::new();
            for r in 0..dim {
                for c in 0..dim {
                    triplets.push((r, c, spd[(r, c)]));
                }
            }
            let op = DiscreteOperator::from_triplets(
                crate::mesh::OperatorKind::IdentityScaled,
                dim,
                triplets,
            );
            let fac = factorize(&op).unwrap();
            let rhs: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let x = fac.solve(&rhs);
            let oracle = spd
                .clone()
                .cholesky()
                .unwrap()
                .solve(&DVector::from_vec(rhs.clone()));
            for i in 0..dim {
                assert!((x[i] - oracle[i]).abs() <= 1e-10 * oracle.norm().max(1.0));
            }
        }
    }

    #[test]
    fn residual_is_tiny_for_many_random_rhs() {
        let g = build_grid(17, ProblemKind::LinearNeumann, 1).unwrap();
        let a = crate::mesh::assemble_laplacian_mixed(&g).unwrap();
        let fac = factorize(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let rhs: Vec<f64> = (0..a.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
            let x = fac.solve(&rhs);
            let ax = a.apply(&x);
            let rnorm: f64 = ax
                .iter()
                .zip(&rhs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let bnorm: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rnorm <= 1e-10 * bnorm, "relative residual {}", rnorm / bnorm);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut triplets = vec![(0, 0, 1.0), (1, 1, -2.0)];
        triplets.push((0, 1, 0.1));
        triplets.push((1, 0, 0.1));
        let op = DiscreteOperator::from_triplets(
            crate::mesh::OperatorKind::IdentityScaled,
            2,
            triplets,
        );
        assert!(matches!(
            factorize(&op),
            Err(Error::Definiteness { .. })
        ));
    }
}
