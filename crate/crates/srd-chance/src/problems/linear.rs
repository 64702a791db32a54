//! Tracking-type control of a Poisson problem with uncertain Neumann data.
//!
//! State equation on the unit square: `-lap y = f + u` with homogeneous
//! Dirichlet data except on the edge `x1 = 0`, where the normal derivative
//! carries a Gaussian boundary field with covariance
//! `gamma (-d2/dx2^2)^{-1}`. Averaging the quadratic tracking objective
//! over the noise analytically leaves a deterministic objective in the
//! mean state plus a control-independent trace term; the joint state
//! bounds become a probability constraint handled by the spherical-radial
//! estimator in the truncated state KL coordinates.

use super::ControlProblem;
use crate::error::{Error, Result};
use crate::field::kl::{boundary_kl, state_kl, KlBasis};
use crate::field::sphere::{gaussian_samples, SampleSet, SamplerKind};
use crate::mesh::{
    assemble_laplacian_mixed, build_grid, factorize, DiscreteOperator, Factorization, Grid,
    ProblemKind,
};
use crate::srd::{
    estimate_mc, estimate_srd, gradient_point_loads, run_directions, run_indicators,
    DirectionKernel, EstimatorKind, ProbabilityEstimate,
};

/// Configuration of the linear problem; defaults are the values used in
/// the experiments.
#[derive(Debug, Clone)]
pub struct LinearConfig {
    pub n: usize,
    /// truncation of the state KL expansion
    pub k: usize,
    pub gamma: f64,
    pub alpha_reg: f64,
    /// constant state bounds at the constraint points (None disables a side)
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub constraint_stride: usize,
    pub target_p: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            n: 128,
            k: 20,
            gamma: 4.0,
            alpha_reg: 1e-5,
            lower: Some(-0.3),
            upper: Some(0.3),
            constraint_stride: 1,
            target_p: 0.9,
        }
    }
}

pub struct LinearProblem {
    pub grid: Grid,
    a: DiscreteOperator,
    a_fac: Factorization,
    pub boundary_basis: KlBasis,
    pub state_basis: KlBasis,
    /// `sqrt(lambda_k) e_k(x_j)`, row-major over constraint points
    point_matrix: Vec<f64>,
    pub y_d: Vec<f64>,
    pub f: Vec<f64>,
    pub alpha_reg: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub target_p: f64,
    /// Half the total state variance: the additive constant separating the
    /// averaged stochastic objective from the deterministic one. Constant
    /// in the control, so excluded from optimization.
    pub trace_term: f64,
}

impl LinearProblem {
    pub fn new(config: &LinearConfig) -> Result<Self> {
        let grid = build_grid(config.n, ProblemKind::LinearNeumann, config.constraint_stride)?;
        let a = assemble_laplacian_mixed(&grid)?;
        let a_fac = factorize(&a)?;
        // all resolvable boundary modes feed the state basis
        let boundary_modes = config.n - 2;
        let boundary_basis = boundary_kl(config.gamma, config.n, boundary_modes)?;
        let state_basis = state_kl(&grid, &a_fac, &boundary_basis, config.k)?;
        if state_basis.k() < config.k {
            return Err(Error::Truncation {
                requested: config.k,
                available: state_basis.k(),
            });
        }
        let point_matrix = state_basis.scaled_point_matrix(grid.constraint_points());
        let y_d = grid.free_field(|x1, x2| {
            0.1 * (2.0 * std::f64::consts::PI * x1).cos() * (2.0 * std::f64::consts::PI * x2).sin()
        });
        let f = vec![0.0; grid.num_free()];
        let m = grid.constraint_points().len();
        let lower = vec![config.lower.unwrap_or(f64::NEG_INFINITY); m];
        let upper = vec![config.upper.unwrap_or(f64::INFINITY); m];
        let trace_term = 0.5 * state_basis.total_variance;
        Ok(LinearProblem {
            grid,
            a,
            a_fac,
            boundary_basis,
            state_basis,
            point_matrix,
            y_d,
            f,
            alpha_reg: config.alpha_reg,
            lower,
            upper,
            target_p: config.target_p,
            trace_term,
        })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.a
    }

    pub fn k(&self) -> usize {
        self.state_basis.k()
    }

    /// The control all probability studies are evaluated at.
    pub fn nominal_control(&self) -> Vec<f64> {
        self.grid.free_field(|x1, x2| {
            0.2 * (2.0 * std::f64::consts::PI * x1).sin() * (std::f64::consts::PI * x2).cos()
        })
    }

    /// Mean state `y0(u)`: one solve against the cached factor.
    pub fn mean_state(&self, u: &[f64]) -> Vec<f64> {
        let w = self.grid.rhs_weights();
        let rhs: Vec<f64> = (0..u.len()).map(|i| w[i] * (self.f[i] + u[i])).collect();
        self.a_fac.solve(&rhs)
    }

    /// `h^2 w`-weighted mass action (the discrete L2 Riesz map).
    fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        let h2 = self.grid.h() * self.grid.h();
        v.iter()
            .zip(self.grid.rhs_weights())
            .map(|(x, w)| h2 * w * x)
            .collect()
    }

    fn kernel_at(&self, u: &[f64]) -> DirectionKernel {
        let y0 = self.mean_state(u);
        let pts = self.grid.constraint_points();
        let y0_pts: Vec<f64> = pts.iter().map(|&j| y0[j]).collect();
        DirectionKernel::new_lenient(&self.point_matrix, self.k(), &y0_pts, &self.lower, &self.upper)
    }

    /// Plain Monte Carlo estimate with Gaussian draws in the state KL
    /// coordinates.
    pub fn chance_mc(&self, u: &[f64], seed: u64, n: usize) -> Result<ProbabilityEstimate> {
        let kernel = self.kernel_at(u);
        let z = gaussian_samples(seed, n, self.k());
        let feasible = run_indicators(&kernel, &z, self.k());
        Ok(estimate_mc(&feasible, !kernel.slater_ok()))
    }

    /// Spherical-radial estimate; `estimator` records whether directions
    /// came from MC or QMC.
    pub fn chance_srd(
        &self,
        u: &[f64],
        samples: &SampleSet,
        want_gradient: bool,
    ) -> Result<ProbabilityEstimate> {
        if samples.k() != self.k() {
            return Err(Error::Mismatch(format!(
                "sample dimension {} does not match state truncation {}",
                samples.k(),
                self.k()
            )));
        }
        let kernel = self.kernel_at(u);
        if !kernel.slater_ok() {
            // reconstruct the named error
            let y0 = self.mean_state(u);
            let pts = self.grid.constraint_points();
            let y0_pts: Vec<f64> = pts.iter().map(|&j| y0[j]).collect();
            crate::srd::RadialGeometry::new(&y0_pts, &self.lower, &self.upper)?;
        }
        let profile = run_directions(&kernel, samples);
        let estimator = match samples.kind {
            SamplerKind::Mc => EstimatorKind::SrdMc,
            SamplerKind::QmcHalton => EstimatorKind::SrdQmc,
        };
        let mut est = estimate_srd(&profile, self.k(), estimator)?;
        if want_gradient {
            let m = self.grid.constraint_points().len();
            let (loads, excluded) = gradient_point_loads(&profile, self.k(), m)?;
            est.gradient = Some(self.gradient_from_loads(&loads));
            est.tangential_excluded = excluded;
        }
        Ok(est)
    }

    /// One adjoint solve turns accumulated point loads into the control
    /// gradient of the sampled probability.
    fn gradient_from_loads(&self, loads: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.grid.num_free()];
        for (&dof, &l) in self.grid.constraint_points().iter().zip(loads) {
            rhs[dof] += l;
        }
        let q = self.a_fac.solve(&rhs);
        let w = self.grid.rhs_weights();
        (0..q.len()).map(|i| w[i] * q[i]).collect()
    }
}

impl ControlProblem for LinearProblem {
    fn control_dim(&self) -> usize {
        self.grid.num_free()
    }

    fn objective(&self, u: &[f64]) -> Result<f64> {
        let y0 = self.mean_state(u);
        let diff: Vec<f64> = y0.iter().zip(&self.y_d).map(|(a, b)| a - b).collect();
        Ok(0.5 * self.grid.dot(&diff, &diff) + 0.5 * self.alpha_reg * self.grid.dot(u, u))
    }

    fn objective_gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let y0 = self.mean_state(u);
        let diff: Vec<f64> = y0.iter().zip(&self.y_d).map(|(a, b)| a - b).collect();
        let q = self.a_fac.solve(&self.mass_apply(&diff));
        let w = self.grid.rhs_weights();
        let mu = self.mass_apply(u);
        Ok((0..u.len())
            .map(|i| w[i] * q[i] + self.alpha_reg * mu[i])
            .collect())
    }

    fn chance(
        &self,
        u: &[f64],
        samples: &SampleSet,
        want_gradient: bool,
    ) -> Result<ProbabilityEstimate> {
        self.chance_srd(u, samples, want_gradient)
    }

    fn slater_margin(&self, u: &[f64]) -> Result<f64> {
        let y0 = self.mean_state(u);
        let mut margin = f64::INFINITY;
        for (idx, &dof) in self.grid.constraint_points().iter().enumerate() {
            margin = margin
                .min(self.upper[idx] - y0[dof])
                .min(y0[dof] - self.lower[idx]);
        }
        Ok(margin)
    }

    fn safe_control(&self) -> Vec<f64> {
        // zero control keeps the mean state at zero, strictly inside any
        // symmetric bounds
        vec![0.0; self.grid.num_free()]
    }

    fn target_probability(&self) -> f64 {
        self.target_p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_problem() -> LinearProblem {
        LinearProblem::new(&LinearConfig {
            n: 24,
            k: 8,
            ..LinearConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_control_zero_data_means_zero_state() {
        let p = small_problem();
        let y0 = p.mean_state(&vec![0.0; p.control_dim()]);
        assert!(y0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_state_is_affine_in_u() {
        let p = small_problem();
        let dim = p.control_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u1: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        let u2: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let y1 = p.mean_state(&u1);
        let y2 = p.mean_state(&u2);
        let y0 = p.mean_state(&vec![0.0; dim]);
        let ysum = p.mean_state(&sum);
        for i in 0..dim {
            let lin = y1[i] + y2[i] - y0[i];
            assert!((ysum[i] - lin).abs() <= 1e-12 * lin.abs().max(1.0));
        }
    }

    #[test]
    fn objective_at_zero_control_is_half_tracking_norm() {
        let p = small_problem();
        let u = vec![0.0; p.control_dim()];
        let j = p.objective(&u).unwrap();
        // independent quadrature of y_d^2 over the free nodes
        let expect = 0.5 * p.grid.dot(&p.y_d, &p.y_d);
        assert!((j - expect).abs() <= 1e-14);
    }

    #[test]
    fn objective_gradient_matches_central_differences() {
        let p = small_problem();
        let dim = p.control_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..dim).map(|_| 0.3 * (rng.random::<f64>() - 0.5)).collect();
        let g = p.objective_gradient(&u).unwrap();
        let eps = 1e-5;
        for _ in 0..5 {
            let h: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let up: Vec<f64> = u.iter().zip(&h).map(|(a, b)| a + eps * b).collect();
            let dn: Vec<f64> = u.iter().zip(&h).map(|(a, b)| a - eps * b).collect();
            let fd = (p.objective(&up).unwrap() - p.objective(&dn).unwrap()) / (2.0 * eps);
            let an: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
            assert!(
                (fd - an).abs() <= 1e-7 * an.abs().max(1.0),
                "fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn delta_load_matches_dense_oracle() {
        // solve with a point load and compare against a dense solve
        let p = LinearProblem::new(&LinearConfig {
            n: 16,
            k: 5,
            ..LinearConfig::default()
        })
        .unwrap();
        let dim = p.control_dim();
        let center = p
            .grid
            .free_of_node(p.grid.node_index(8, 8))
            .unwrap();
        let mut u = vec![0.0; dim];
        u[center] = 1.0 / (p.grid.h() * p.grid.h());
        let y = p.mean_state(&u);
        let dense = p.a.to_dense();
        let mut rhs = nalgebra::DVector::zeros(dim);
        let w = p.grid.rhs_weights();
        rhs[center] = u[center] * w[center];
        let oracle = dense.lu().solve(&rhs).unwrap();
        for i in 0..dim {
            assert!((y[i] - oracle[i]).abs() <= 1e-10 * oracle.amax());
        }
    }

    #[test]
    fn probability_monotone_in_bounds_with_fixed_samples() {
        let mut cfg = LinearConfig {
            n: 24,
            k: 8,
            ..LinearConfig::default()
        };
        let samples =
            crate::field::sphere::sphere_samples(SamplerKind::QmcHalton, 0, 2000, 8).unwrap();
        let mut last = 0.0;
        for b in [0.3, 0.5, 0.7] {
            cfg.lower = Some(-b);
            cfg.upper = Some(b);
            let p = LinearProblem::new(&cfg).unwrap();
            let u = p.nominal_control();
            let est = p.chance_srd(&u, &samples, false).unwrap();
            assert!(
                est.value >= last,
                "widening bounds must not decrease the estimate"
            );
            last = est.value;
        }
    }

    #[test]
    fn slater_violation_is_reported() {
        let p = LinearProblem::new(&LinearConfig {
            n: 16,
            k: 5,
            lower: Some(-0.01),
            upper: Some(0.01),
            ..LinearConfig::default()
        })
        .unwrap();
        let u = p.grid.free_field(|_, _| 40.0);
        let samples = crate::field::sphere::sphere_samples(SamplerKind::Mc, 0, 10, 5).unwrap();
        assert!(matches!(
            p.chance_srd(&u, &samples, false),
            Err(Error::Slater { .. })
        ));
        // the MC path only warns
        let est = p.chance_mc(&u, 0, 100).unwrap();
        assert!(est.slater_warning);
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn probability_gradient_matches_central_differences() {
        let p = small_problem();
        let dim = p.control_dim();
        let samples =
            crate::field::sphere::sphere_samples(SamplerKind::QmcHalton, 0, 500, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = p
            .nominal_control()
            .iter()
            .map(|v| v + 0.02 * (rng.random::<f64>() - 0.5))
            .collect();
        let est = p.chance_srd(&u, &samples, true).unwrap();
        let g = est.gradient.as_ref().unwrap();
        let eps = 1e-5;
        for _ in 0..10 {
            let h: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let up: Vec<f64> = u.iter().zip(&h).map(|(a, b)| a + eps * b).collect();
            let dn: Vec<f64> = u.iter().zip(&h).map(|(a, b)| a - eps * b).collect();
            let fup = p.chance_srd(&up, &samples, false).unwrap().value;
            let fdn = p.chance_srd(&dn, &samples, false).unwrap().value;
            let fd = (fup - fdn) / (2.0 * eps);
            let an: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                "fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn infinite_rays_give_zero_gradient() {
        // bounds far beyond any reachable state: every ray is infinite
        let p = LinearProblem::new(&LinearConfig {
            n: 16,
            k: 5,
            lower: Some(-1e6),
            upper: Some(1e6),
            ..LinearConfig::default()
        })
        .unwrap();
        let samples =
            crate::field::sphere::sphere_samples(SamplerKind::QmcHalton, 0, 200, 5).unwrap();
        let est = p.chance_srd(&p.nominal_control(), &samples, true).unwrap();
        assert_eq!(est.value, 1.0);
        assert!(est.gradient.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn averaged_stochastic_objective_equals_deterministic_plus_trace() {
        // draw states from the truncated expansion and average the full
        // tracking functional; it must match objective(u) + trace_term
        // within Monte Carlo error
        let p = LinearProblem::new(&LinearConfig {
            n: 24,
            k: 20,
            ..LinearConfig::default()
        })
        .unwrap();
        let u = p.nominal_control();
        let y0 = p.mean_state(&u);
        let j_det = p.objective(&u).unwrap();
        // truncated trace: this comparison can only see the retained modes
        let trace_k: f64 = 0.5 * p.state_basis.eigenvalues().iter().sum::<f64>();
        let k = p.k();
        let n_draws = 100_000;
        let z = crate::field::sphere::gaussian_samples(77, n_draws, k);
        let mut vals = Vec::with_capacity(n_draws);
        for i in 0..n_draws {
            let coeffs: Vec<f64> = z[i * k..(i + 1) * k]
                .iter()
                .zip(p.state_basis.eigenvalues())
                .map(|(c, l)| c * l.sqrt())
                .collect();
            let dev = p.state_basis.synthesize(&coeffs);
            let field: Vec<f64> = y0.iter().zip(&dev).map(|(a, b)| a + b).collect();
            let diff: Vec<f64> = field.iter().zip(&p.y_d).map(|(a, b)| a - b).collect();
            vals.push(0.5 * p.grid.dot(&diff, &diff) + 0.5 * p.alpha_reg * p.grid.dot(&u, &u));
        }
        let mean: f64 = vals.iter().sum::<f64>() / n_draws as f64;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n_draws as f64 - 1.0);
        let se = (var / n_draws as f64).sqrt();
        assert!(
            (mean - (j_det + trace_k)).abs() <= 3.0 * se,
            "sampled {mean} vs deterministic {j_det} + trace {trace_k} (se {se})"
        );
        // the retained modes carry nearly all of the trace
        assert!(trace_k <= 0.5 * p.state_basis.total_variance + 1e-15);
        assert!(trace_k >= 0.5 * p.state_basis.total_variance * 0.999);
    }

    #[test]
    fn scalar_chain_matches_symbolic_derivative() {
        // single constraint point, single mode: the sampled probability is
        // a closed-form function of the load at the point and the gradient
        // reduces to d/dt F_chi((y0(t) - ybar)/delta)
        use crate::field::chi::{chi_cdf, chi_pdf};
        let geom = crate::srd::RadialGeometry::new(&[0.1], &[f64::NEG_INFINITY], &[0.5]).unwrap();
        let delta = -0.2;
        let ray = geom.ray_from_slopes(&[delta]);
        let rho = (0.1 - 0.5) / delta;
        assert!((ray.rho - rho).abs() < 1e-14);
        // one-sample estimate: phi(y0) = F((y0 - 0.5)/delta), dof = 1
        let dof = 1;
        let phi = chi_cdf(ray.rho, dof).unwrap();
        let dphi_dy0 = chi_pdf(ray.rho, dof).unwrap() / delta;
        let eps = 1e-6;
        let num = (chi_cdf((0.1 + eps - 0.5) / delta, dof).unwrap()
            - chi_cdf((0.1 - eps - 0.5) / delta, dof).unwrap())
            / (2.0 * eps);
        assert!((dphi_dy0 - num).abs() <= 1e-8 * num.abs());
        assert!(phi > 0.0 && phi < 1.0);
        // and the load accumulator reproduces exactly f/delta / N
        let profile = crate::srd::RadialProfile { rays: vec![ray] };
        let (loads, _) = gradient_point_loads(&profile, dof, 1).unwrap();
        assert!((loads[0] - chi_pdf(ray.rho, dof).unwrap() / delta).abs() < 1e-15);
    }
}
