//! Karhunen-Loeve bases for the boundary input field and for the state.
//!
//! The boundary covariance `gamma (-d^2/dx2^2)^{-1}` on the unit interval
//! with pinned endpoints has the analytic eigenpairs `sqrt(2) sin(k pi x2)`
//! and `gamma (k pi)^{-2}`, sampled here on the boundary grid. The state
//! basis is computed from the map that sends whitened boundary
//! coefficients to states: its singular value decomposition (taken in the
//! discrete L2 geometry) yields the eigenpairs of the state covariance.

use super::sphere::SampleSet;
use crate::error::{Error, Result};
use crate::mesh::{boundary_injection, Factorization, Grid};
use nalgebra::{DMatrix, SymmetricEigen};

/// Which random variable a basis expands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlTarget {
    /// The boundary (or domain) input field.
    InputXi,
    /// The PDE state.
    StateY,
}

/// Truncated KL basis: nonincreasing eigenvalues and discretely
/// orthonormal modes. In the expansion coordinates the coefficient vector
/// is `N(0, diag(eigenvalues))`, so the spherical-radial matrix `L` is
/// `diag(sqrt(eigenvalues))`.
#[derive(Debug, Clone)]
pub struct KlBasis {
    pub target: KlTarget,
    eigenvalues: Vec<f64>,
    /// one field per mode (boundary nodes for InputXi, free dofs for StateY)
    modes: Vec<Vec<f64>>,
    /// sum of all covariance eigenvalues that the construction could see
    /// (the discrete trace), not just the retained ones
    pub total_variance: f64,
    /// set when the requested truncation exceeded the available rank
    pub truncated_to_rank: bool,
}

impl KlBasis {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k]
    }

    pub fn field_len(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    /// `sqrt(lambda_k) * e_k(x_j)` matrix, row-major over the given dof
    /// subset. This is the map from unit sphere directions to ray slopes at
    /// the constraint points.
    pub fn scaled_point_matrix(&self, dofs: &[usize]) -> Vec<f64> {
        let k = self.k();
        let mut out = vec![0.0; dofs.len() * k];
        for (kk, mode) in self.modes.iter().enumerate() {
            let s = self.eigenvalues[kk].sqrt();
            for (j, &dof) in dofs.iter().enumerate() {
                out[j * k + kk] = s * mode[dof];
            }
        }
        out
    }

    /// Field `sum_k coeff_k e_k`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.k());
        let mut out = vec![0.0; self.field_len()];
        for (kk, mode) in self.modes.iter().enumerate() {
            let c = coeffs[kk];
            for (o, m) in out.iter_mut().zip(mode) {
                *o += c * m;
            }
        }
        out
    }

    fn debug_check_orthonormal(&self, dot: impl Fn(&[f64], &[f64]) -> f64) {
        if cfg!(debug_assertions) {
            for a in 0..self.k() {
                assert!(
                    self.eigenvalues[a] >= 0.0,
                    "negative eigenvalue {}",
                    self.eigenvalues[a]
                );
                if a > 0 {
                    assert!(self.eigenvalues[a - 1] >= self.eigenvalues[a]);
                }
                for b in a..self.k() {
                    let g = dot(&self.modes[a], &self.modes[b]);
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!(
                        (g - expect).abs() <= 1e-8,
                        "gram({a},{b}) = {g}, expected {expect}"
                    );
                }
            }
        }
    }
}

/// Analytic KL basis of the boundary covariance `gamma (-d2/dx2^2)^{-1}`,
/// sampled on the interior nodes of an `n_boundary`-point grid on [0, 1]
/// and normalized in the `h`-weighted discrete inner product.
pub fn boundary_kl(gamma: f64, n_boundary: usize, k: usize) -> Result<KlBasis> {
    if gamma <= 0.0 {
        return Err(Error::Domain("gamma must be positive".into()));
    }
    let interior = n_boundary.saturating_sub(2);
    if k > interior {
        return Err(Error::Truncation {
            requested: k,
            available: interior,
        });
    }
    let h = 1.0 / (n_boundary - 1) as f64;
    let pi = std::f64::consts::PI;
    let mut eigenvalues = Vec::with_capacity(k);
    let mut modes = Vec::with_capacity(k);
    for kk in 1..=k {
        eigenvalues.push(gamma / (kk as f64 * pi).powi(2));
        let mode: Vec<f64> = (1..=interior)
            .map(|i| std::f64::consts::SQRT_2 * (kk as f64 * pi * i as f64 * h).sin())
            .collect();
        modes.push(mode);
    }
    let total_variance: f64 = (1..=interior)
        .map(|kk| gamma / (kk as f64 * pi).powi(2))
        .sum();
    let basis = KlBasis {
        target: KlTarget::InputXi,
        eigenvalues,
        modes,
        total_variance,
        truncated_to_rank: false,
    };
    basis.debug_check_orthonormal(|a, b| h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>());
    Ok(basis)
}

/// State KL basis for the linear problem: eigenpairs of the state
/// covariance `A^{-1} B C0 B* A^{-*}`.
///
/// The whitened input-to-state map has columns
/// `sqrt(lambda_k^xi) A^{-1} B e_k^xi` over all boundary modes; its
/// singular values squared (in the discrete L2 geometry of the grid) are
/// the state eigenvalues. The Gram variant is used: eigendecompose the
/// small `m_b x m_b` cross matrix instead of a tall SVD.
pub fn state_kl(
    grid: &Grid,
    a_fac: &Factorization,
    boundary_basis: &KlBasis,
    k: usize,
) -> Result<KlBasis> {
    let m_b = boundary_basis.k();
    let dim = grid.num_free();
    // columns of the scaled map, row i weighted by h sqrt(w_i)
    let h = grid.h();
    let w = grid.rhs_weights();
    let mut cols = DMatrix::zeros(dim, m_b);
    for kk in 0..m_b {
        let s = boundary_basis.eigenvalues()[kk].sqrt();
        let rhs = boundary_injection(grid, boundary_basis.mode(kk))?;
        let field = a_fac.solve(&rhs);
        for i in 0..dim {
            cols[(i, kk)] = s * field[i] * h * w[i].sqrt();
        }
    }
    let gram = cols.transpose() * &cols;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m_b).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = lambda_max * 1e-28;
    let available = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > rank_tol)
        .count();
    let kept = k.min(available);

    let mut eigenvalues = Vec::with_capacity(kept);
    let mut modes = Vec::with_capacity(kept);
    for &idx in order.iter().take(kept) {
        let lambda = eig.eigenvalues[idx];
        let sigma = lambda.sqrt();
        let v = eig.eigenvectors.column(idx);
        let scaled = &cols * v;
        // unscale back to nodal values and fix the sign convention
        let mut mode = vec![0.0; dim];
        for i in 0..dim {
            mode[i] = scaled[i] / (sigma * h * w[i].sqrt());
        }
        let mut extreme = 0.0f64;
        for &v in &mode {
            if v.abs() > extreme.abs() {
                extreme = v;
            }
        }
        if extreme < 0.0 {
            mode.iter_mut().for_each(|v| *v = -*v);
        }
        eigenvalues.push(lambda);
        modes.push(mode);
    }
    let total_variance: f64 = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .sum();
    let basis = KlBasis {
        target: KlTarget::StateY,
        eigenvalues,
        modes,
        total_variance,
        truncated_to_rank: kept < k,
    };
    basis.debug_check_orthonormal(|a, b| grid.dot(a, b));
    Ok(basis)
}

/// Domain Gaussian field with covariance
/// `scale^2 ((alpha A + M)^{-1} M)^2`.
pub struct DomainFieldModel {
    pub alpha: f64,
    /// amplitude multiplier of the field
    pub scale: f64,
    pub xi0: Vec<f64>,
    shifted_fac: Factorization,
    mass: crate::mesh::DiscreteOperator,
    mass_chol: std::sync::Arc<Factorization>,
}

impl DomainFieldModel {
    pub fn new(
        alpha: f64,
        scale: f64,
        xi0: Vec<f64>,
        stiffness: &crate::mesh::DiscreteOperator,
        mass: crate::mesh::DiscreteOperator,
        mass_chol: std::sync::Arc<Factorization>,
    ) -> Result<Self> {
        if alpha <= 0.0 || scale <= 0.0 {
            return Err(Error::Domain("alpha and scale must be positive".into()));
        }
        let shifted = mass.add_scaled(stiffness, alpha, crate::mesh::OperatorKind::Mass);
        let shifted_fac = crate::mesh::factorize(&shifted)?;
        Ok(DomainFieldModel {
            alpha,
            scale,
            xi0,
            shifted_fac,
            mass,
            mass_chol,
        })
    }

    fn shifted_solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.shifted_fac.solve(rhs)
    }

    /// One field draw `xi0 + scale (alpha A + M)^{-1} L z` for standard
    /// normal `z`.
    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        let lz = self.mass_chol.factor_apply(z);
        let mut xi = self.shifted_solve(&lz);
        for (x, m) in xi.iter_mut().zip(&self.xi0) {
            *x = self.scale * *x + m;
        }
        xi
    }

    /// Whitening map `Ltilde v = scale (alpha A + M)^{-1} L v`.
    pub fn whitened_column(&self, v: &[f64]) -> Vec<f64> {
        let lv = self.mass_chol.factor_apply(v);
        let mut x = self.shifted_solve(&lv);
        for v in x.iter_mut() {
            *v *= self.scale;
        }
        x
    }

    /// Covariance operator action `scale^2 ((alpha A + M)^{-1} M)^2 g`.
    pub fn covariance_apply(&self, g: &[f64]) -> Vec<f64> {
        let mg = self.mass.apply(g);
        let s1 = self.shifted_solve(&mg);
        let ms1 = self.mass.apply(&s1);
        let mut x = self.shifted_solve(&ms1);
        for v in x.iter_mut() {
            *v *= self.scale * self.scale;
        }
        x
    }

    pub fn mass(&self) -> &crate::mesh::DiscreteOperator {
        &self.mass
    }
}

/// CSV export of a sample set: one row per sample, `index,radius,v...`.
pub fn samples_to_csv(set: &SampleSet) -> String {
    let mut out = String::new();
    out.push_str("# kind,seed,n,k\n");
    out.push_str(&format!("# {},{},{},{}\n", set.kind, set.seed, set.len(), set.k()));
    for i in 0..set.len() {
        let r = set
            .radii()
            .map(|r| format!("{:.17e}", r[i]))
            .unwrap_or_default();
        let dir: Vec<String> = set.direction(i).iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&format!("{i},{r},{}\n", dir.join(",")));
    }
    out
}

/// CSV export of a KL basis: one row per mode, `index,eigenvalue,e...`.
pub fn kl_to_csv(basis: &KlBasis) -> String {
    let mut out = String::new();
    out.push_str("# mode,eigenvalue,values...\n");
    for kk in 0..basis.k() {
        let vals: Vec<String> = basis.mode(kk).iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&format!(
            "{},{:.17e},{}\n",
            kk,
            basis.eigenvalues()[kk],
            vals.join(",")
        ));
    }
    out
}

/// Parse the output of [`kl_to_csv`].
pub fn kl_from_csv(text: &str, target: KlTarget) -> Result<KlBasis> {
    let mut eigenvalues = Vec::new();
    let mut modes = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Config(format!("bad KL csv row: {line}")));
        }
        let lambda: f64 = fields[1]
            .parse()
            .map_err(|e| Error::Config(format!("bad eigenvalue: {e}")))?;
        let vals: std::result::Result<Vec<f64>, _> =
            fields[2..].iter().map(|v| v.parse::<f64>()).collect();
        eigenvalues.push(lambda);
        modes.push(vals.map_err(|e| Error::Config(format!("bad mode value: {e}")))?);
    }
    let total = eigenvalues.iter().sum();
    Ok(KlBasis {
        target,
        eigenvalues,
        modes,
        total_variance: total,
        truncated_to_rank: false,
    })
}
