//! SQP solver for `min J(u)` subject to `phi(u) >= p`.
//!
//! One smooth inequality constraint makes the quadratic subproblem
//! solvable in closed form against the quasi-Newton model: take the
//! unconstrained step; if it violates the linearized constraint, add the
//! multiple of the model-preconditioned constraint gradient that restores
//! it. Globalization is an l1-penalty merit function with Armijo
//! backtracking; curvature is a damped BFGS model of the Lagrangian
//! (dense update below 4096 unknowns, limited-memory above). Samples stay
//! frozen for the whole run, so the solved program is deterministic and
//! reruns are bit-identical.

use crate::error::{Error, Result};
use crate::field::sphere::SampleSet;
use crate::problems::ControlProblem;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct SqpConfig {
    /// target probability level in (0, 1)
    pub target_p: f64,
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// Armijo constant
    pub armijo: f64,
    /// backtracking factor in (0, 1)
    pub backtrack: f64,
    /// penalty safeguard factor above the current multiplier
    pub penalty_margin: f64,
    /// limited-memory pairs kept above the dense-BFGS size limit
    pub lbfgs_memory: usize,
    /// controls at most this many unknowns use the dense BFGS model
    pub dense_limit: usize,
    /// minimal step size before the line search gives up
    pub min_step: f64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            target_p: 0.9,
            max_iter: 120,
            kkt_tol: 1e-6,
            armijo: 1e-4,
            backtrack: 0.5,
            penalty_margin: 1.5,
            lbfgs_memory: 25,
            dense_limit: 64 * 64,
            min_step: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub probability: f64,
    pub kkt_residual: f64,
    pub step_norm: f64,
    pub multiplier: f64,
    pub penalty: f64,
    /// merit value before and after the accepted step, under the penalty
    /// of this iteration
    pub merit_before: f64,
    pub merit_after: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub control: Vec<f64>,
    pub objective: f64,
    pub probability: f64,
    pub multiplier: f64,
    pub kkt_residual: f64,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
    /// probability re-estimated at the solution with fresh samples, when a
    /// validation set is supplied
    pub validated_probability: Option<f64>,
}

/// KKT residual of the single-inequality program:
/// `|grad J - mu grad phi| + |mu (phi - p)| + max(0, p - phi) + max(0, -mu)`.
pub fn kkt_residual(
    grad_j: &[f64],
    grad_phi: &[f64],
    phi: f64,
    p: f64,
    mu: f64,
) -> f64 {
    let stat: f64 = grad_j
        .iter()
        .zip(grad_phi)
        .map(|(gj, gp)| (gj - mu * gp) * (gj - mu * gp))
        .sum::<f64>()
        .sqrt();
    stat + (mu * (phi - p)).abs() + (p - phi).max(0.0) + (-mu).max(0.0)
}

enum Curvature {
    Dense { h: DMatrix<f64>, b: DMatrix<f64> },
    Limited { pairs: Vec<(DVector<f64>, DVector<f64>, f64)>, gamma: f64, memory: usize },
}

impl Curvature {
    fn new(dim: usize, cfg: &SqpConfig, seed: Option<&DMatrix<f64>>) -> Self {
        if dim <= cfg.dense_limit {
            match seed {
                Some(b0) => {
                    let h0 = b0
                        .clone()
                        .cholesky()
                        .expect("objective Hessian must be SPD")
                        .inverse();
                    Curvature::Dense {
                        h: h0,
                        b: b0.clone(),
                    }
                }
                None => Curvature::Dense {
                    h: DMatrix::identity(dim, dim),
                    b: DMatrix::identity(dim, dim),
                },
            }
        } else {
            Curvature::Limited {
                pairs: Vec::new(),
                gamma: 1.0,
                memory: cfg.lbfgs_memory,
            }
        }
    }

    /// `H g` (inverse model application).
    fn apply_inverse(&self, g: &DVector<f64>) -> DVector<f64> {
        match self {
            Curvature::Dense { h, .. } => h * g,
            Curvature::Limited { pairs, gamma, .. } => {
                // standard two-loop recursion
                let mut q = g.clone();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * s.dot(&q);
                    q -= y * a;
                    alphas.push(a);
                }
                q *= *gamma;
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = rho * y.dot(&q);
                    q += s * (a - b);
                }
                q
            }
        }
    }

    /// `B s` (forward model application, used for Powell damping).
    fn apply_forward(&self, s: &DVector<f64>) -> DVector<f64> {
        match self {
            Curvature::Dense { b, .. } => b * s,
            Curvature::Limited { pairs, gamma, .. } => {
                // cheap surrogate: initial matrix only (pairs enter through
                // the damping test, not an exact forward product)
                let mut out = s.clone();
                out /= *gamma;
                let _ = pairs;
                out
            }
        }
    }

    /// Damped BFGS update with the Powell correction, keeping the model
    /// positive definite.
    fn update(&mut self, s: DVector<f64>, y: DVector<f64>) {
        let bs = self.apply_forward(&s);
        let sbs = s.dot(&bs).max(1e-300);
        let sy = s.dot(&y);
        let theta = if sy >= 0.2 * sbs {
            1.0
        } else {
            0.8 * sbs / (sbs - sy)
        };
        let y_damped = if theta < 1.0 {
            &y * theta + &bs * (1.0 - theta)
        } else {
            y
        };
        let sy = s.dot(&y_damped);
        if sy <= 1e-14 * s.norm() * y_damped.norm() {
            return;
        }
        match self {
            Curvature::Dense { h, b } => {
                // forward update
                let brank: DMatrix<f64> = &bs * bs.transpose();
                *b -= brank / sbs;
                *b += &y_damped * y_damped.transpose() / sy;
                // inverse update (Sherman-Morrison form)
                let rho = 1.0 / sy;
                let hy = &*h * &y_damped;
                let yhy = y_damped.dot(&hy);
                let ss: DMatrix<f64> = &s * s.transpose();
                let hys: DMatrix<f64> = &hy * s.transpose();
                *h += ss * (rho * (1.0 + rho * yhy));
                *h -= (&hys + hys.transpose()) * rho;
            }
            Curvature::Limited { pairs, gamma, memory } => {
                *gamma = sy / y_damped.dot(&y_damped);
                pairs.push((s, y_damped, 1.0 / sy));
                if pairs.len() > *memory {
                    pairs.remove(0);
                }
            }
        }
    }
}

/// Restore strict mean feasibility by blending toward the problem's safe
/// control.
fn restore_slater(
    problem: &dyn ControlProblem,
    u: &mut Vec<f64>,
) -> Result<()> {
    if problem.slater_margin(u)? > 0.0 {
        return Ok(());
    }
    let safe = problem.safe_control();
    let mut t = 0.5;
    for _ in 0..12 {
        let blended: Vec<f64> = u
            .iter()
            .zip(&safe)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        if problem.slater_margin(&blended)? > 0.0 {
            *u = blended;
            return Ok(());
        }
        t = 0.5 * (t + 1.0);
    }
    if problem.slater_margin(&safe)? > 0.0 {
        *u = safe;
        return Ok(());
    }
    Err(Error::InfeasibleStart(
        "restoration toward the safe control failed to produce a strictly feasible mean".into(),
    ))
}

/// Solve the sample-average program with frozen samples.
pub fn solve_sqp(
    problem: &dyn ControlProblem,
    config: &SqpConfig,
    samples: &SampleSet,
    initial: &[f64],
    validation: Option<&SampleSet>,
) -> Result<SolveReport> {
    let p = config.target_p;
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Config(format!("target p must be in (0,1), got {p}")));
    }
    let dim = problem.control_dim();
    assert_eq!(initial.len(), dim);
    let mut u = initial.to_vec();
    restore_slater(problem, &mut u)?;

    let hessian_seed = problem.objective_hessian();
    let mut curvature = Curvature::new(dim, config, hessian_seed.as_ref());
    let mut penalty = 1.0f64;
    let mut mu = 0.0f64;
    let mut curvature_reset = false;
    let mut history = Vec::new();
    let mut termination = Termination::MaxIterations;

    let mut j = problem.objective(&u)?;
    let mut gj = DVector::from_vec(problem.objective_gradient(&u)?);
    let mut est = problem.chance(&u, samples, true)?;
    let mut gphi = DVector::from_vec(est.gradient.clone().expect("gradient requested"));

    let mut kkt = f64::INFINITY;
    for iter in 0..config.max_iter {
        kkt = kkt_residual(gj.as_slice(), gphi.as_slice(), est.value, p, mu);
        if kkt <= config.kkt_tol {
            termination = Termination::Converged;
            break;
        }

        // quadratic subproblem against the quasi-Newton model
        let du = -curvature.apply_inverse(&gj);
        let b = p - est.value;
        let lin = gphi.dot(&du);
        let (step, mu_new) = if lin >= b {
            (du, 0.0)
        } else {
            let hgp = curvature.apply_inverse(&gphi);
            let denom = gphi.dot(&hgp).max(1e-300);
            let m = (b - lin) / denom;
            (du + &hgp * m, m)
        };
        mu = mu_new;

        // l1 merit line search
        penalty = penalty.max(config.penalty_margin * mu + 0.1);
        let viol = (p - est.value).max(0.0);
        let merit0 = j + penalty * viol;
        let descent = gj.dot(&step) - penalty * viol;
        let mut t = 1.0;
        let mut accepted = false;
        let mut j_new = j;
        let mut est_new = None;
        while t >= config.min_step {
            let u_try: Vec<f64> = u
                .iter()
                .zip(step.iter())
                .map(|(a, d)| a + t * d)
                .collect();
            // candidate must keep the mean strictly feasible, otherwise
            // the radial representation breaks down
            if problem.slater_margin(&u_try)? > 0.0 {
                let jt = problem.objective(&u_try)?;
                let et = problem.chance(&u_try, samples, false)?;
                let merit_t = jt + penalty * (p - et.value).max(0.0);
                if merit_t <= merit0 + config.armijo * t * descent {
                    u = u_try;
                    j_new = jt;
                    est_new = Some(et);
                    accepted = true;
                    break;
                }
            }
            t *= config.backtrack;
        }
        if !accepted {
            if !curvature_reset {
                // a stale quasi-Newton model is the usual culprit: rebuild
                // it and try once more from the same iterate
                curvature = Curvature::new(dim, config, hessian_seed.as_ref());
                curvature_reset = true;
                continue;
            }
            termination = Termination::LineSearchFailed;
            break;
        }
        curvature_reset = false;

        let est_light = est_new.expect("accepted step has an estimate");
        // gradients at the new iterate
        let gj_new = DVector::from_vec(problem.objective_gradient(&u)?);
        let mut est_full = problem.chance(&u, samples, true)?;
        debug_assert_eq!(est_full.value.to_bits(), est_light.value.to_bits());
        let gphi_new = DVector::from_vec(est_full.gradient.take().expect("gradient requested"));

        // Lagrangian-gradient difference drives the curvature model
        let step_taken = &step * t;
        let grad_l_new = &gj_new - &gphi_new * mu;
        let grad_l_old = &gj - &gphi * mu;
        curvature.update(step_taken.clone(), &grad_l_new - &grad_l_old);

        let merit_after = j_new + penalty * (p - est_full.value).max(0.0);
        history.push(IterationRecord {
            iter,
            objective: j_new,
            probability: est_full.value,
            kkt_residual: kkt,
            step_norm: step_taken.norm(),
            multiplier: mu,
            penalty,
            merit_before: merit0,
            merit_after,
        });

        j = j_new;
        gj = gj_new;
        gphi = gphi_new;
        est = est_full;
    }

    let validated_probability = match validation {
        Some(v) => Some(problem.chance(&u, v, false)?.value),
        None => None,
    };
    Ok(SolveReport {
        control: u,
        objective: j,
        probability: est.value,
        multiplier: mu,
        kkt_residual: kkt,
        termination,
        history,
        validated_probability,
    })
}
