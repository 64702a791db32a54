//! The experiment drivers behind the CLI subcommands. Every command is
//! deterministic given its configuration and seed; timing never enters the
//! CSV unless explicitly requested.

use super::config::{ExperimentConfig, ProblemKindConfig};
use crate::error::{Error, Result};
use crate::field::sphere::{sphere_samples, SamplerKind};
use crate::problems::{BilinearProblem, ControlProblem, LinearProblem, OracleProblem};
use crate::sqp::{solve_sqp, SqpConfig, Termination};
use crate::srd::{variance_report, EstimatorKind, ProbabilityEstimate};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

pub struct CommandOutput {
    /// (file name, contents)
    pub files: Vec<(String, String)>,
    /// log lines for stderr
    pub log: Vec<String>,
}

impl CommandOutput {
    fn new() -> Self {
        CommandOutput {
            files: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, contents) in &self.files {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

fn header(cfg: &ExperimentConfig, command: &str, columns: &str) -> String {
    format!("# srd-chance {command} config_hash={}\n{columns}\n", cfg.hash())
}

fn fmt(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.12e}")
    }
}

/// Derive a per-repetition seed from the base seed.
fn rep_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add(rep as u64).wrapping_mul(0x9e3779b97f4a7c15)
}

enum AnyProblem {
    Linear(Box<LinearProblem>),
    Bilinear(Box<BilinearProblem>),
    Oracle(OracleProblem),
}

fn build_problem(cfg: &ExperimentConfig) -> Result<AnyProblem> {
    Ok(match cfg.problem.kind {
        ProblemKindConfig::Linear => AnyProblem::Linear(Box::new(cfg.build_linear()?)),
        ProblemKindConfig::Bilinear => AnyProblem::Bilinear(Box::new(cfg.build_bilinear()?)),
        ProblemKindConfig::Ball | ProblemKindConfig::Halfspace => {
            AnyProblem::Oracle(cfg.build_oracle()?)
        }
    })
}

impl AnyProblem {
    /// Sphere dimension / chi degrees of freedom of the estimators.
    fn dof(&self) -> usize {
        match self {
            AnyProblem::Linear(p) => p.k(),
            AnyProblem::Bilinear(p) => p.noise_dim(),
            AnyProblem::Oracle(p) => p.k,
        }
    }

    fn estimate(
        &self,
        estimator: EstimatorKind,
        seed: u64,
        n: usize,
    ) -> Result<ProbabilityEstimate> {
        match estimator {
            EstimatorKind::Mc => match self {
                AnyProblem::Linear(p) => p.chance_mc(&p.nominal_control(), seed, n),
                AnyProblem::Bilinear(p) => p.chance_mc(&p.safe_control(), seed, n),
                AnyProblem::Oracle(p) => Ok(p.chance_mc(seed, n)),
            },
            EstimatorKind::SrdMc | EstimatorKind::SrdQmc => {
                let kind = if estimator == EstimatorKind::SrdMc {
                    SamplerKind::Mc
                } else {
                    SamplerKind::QmcHalton
                };
                let samples = sphere_samples(kind, seed, n, self.dof())?;
                match self {
                    AnyProblem::Linear(p) => p.chance_srd(&p.nominal_control(), &samples, false),
                    AnyProblem::Bilinear(p) => p.chance_srd(&p.safe_control(), &samples, false),
                    AnyProblem::Oracle(p) => p.chance_srd(&samples),
                }
            }
        }
    }
}

/// One probability estimate, with variance and range diagnostics.
pub fn cmd_estimate(cfg: &ExperimentConfig, timing: bool) -> Result<CommandOutput> {
    let mut out = CommandOutput::new();
    let problem = build_problem(cfg)?;
    let s = &cfg.sampling;
    let t0 = Instant::now();
    let est = problem.estimate(s.estimator, s.seed, s.n_samples)?;
    let wall = if timing {
        t0.elapsed().as_millis() as u64
    } else {
        0
    };
    let mut csv = header(
        cfg,
        "estimate",
        "problem,estimator,n,k,seed,n_samples,p_hat,var_elem,rho_inf,rho_sup,degenerate,wallclock_ms",
    );
    let _ = writeln!(
        csv,
        "{:?},{},{},{},{},{},{},{},{},{},{},{}",
        cfg.problem.kind,
        est.estimator,
        cfg.problem.n,
        problem.dof(),
        s.seed,
        s.n_samples,
        fmt(est.value),
        fmt(est.sample_variance),
        est.rho_inf.map(fmt).unwrap_or_default(),
        est.rho_sup.map(fmt).unwrap_or_default(),
        est.degenerate_count,
        wall
    );
    out.files.push(("estimate.csv".into(), csv));
    out.log.push(format!(
        "estimate: p_hat = {:.6}, elementary variance = {:.3e} ({} samples, {:.1} ms)",
        est.value,
        est.sample_variance,
        s.n_samples,
        t0.elapsed().as_secs_f64() * 1e3
    ));
    if est.slater_warning {
        out.log.push("warning: mean state violates a bound".into());
    }
    Ok(out)
}

/// Root-mean-square error of each estimator against a high-sample
/// reference, over the configured sample schedule.
pub fn cmd_converge(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let mut out = CommandOutput::new();
    let problem = build_problem(cfg)?;
    let s = &cfg.sampling;
    let reference = problem
        .estimate(EstimatorKind::SrdQmc, s.seed ^ 0xdead_beef, s.reference_samples)?
        .value;
    out.log.push(format!(
        "reference probability {reference:.7} ({} srd-qmc samples)",
        s.reference_samples
    ));
    let mut csv = header(cfg, "converge", "estimator,n_samples,rmse,reps");
    for estimator in [EstimatorKind::Mc, EstimatorKind::SrdMc, EstimatorKind::SrdQmc] {
        for &n in &s.schedule {
            let (rmse, reps) = match estimator {
                // the Halton set is deterministic: a single run, absolute error
                EstimatorKind::SrdQmc => {
                    let e = problem.estimate(estimator, s.seed, n)?;
                    ((e.value - reference).abs(), 1)
                }
                _ => {
                    let mut sq = 0.0;
                    for rep in 0..s.reps {
                        let e = problem.estimate(estimator, rep_seed(s.seed, rep), n)?;
                        sq += (e.value - reference).powi(2);
                    }
                    ((sq / s.reps as f64).sqrt(), s.reps)
                }
            };
            let _ = writeln!(csv, "{estimator},{n},{},{reps}", fmt(rmse));
        }
    }
    out.files.push(("converge.csv".into(), csv));
    Ok(out)
}

/// RMSE curves for several KL truncations against a higher-truncation
/// reference (linear problem only).
pub fn cmd_kl_study(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    if cfg.problem.kind != ProblemKindConfig::Linear {
        return Err(Error::Config("kl-study needs the linear problem".into()));
    }
    let mut out = CommandOutput::new();
    let s = &cfg.sampling;
    let mut ref_cfg = cfg.clone();
    ref_cfg.problem.k = s.reference_k;
    let ref_problem = ref_cfg.build_linear()?;
    let reference = ref_problem
        .chance_srd(
            &ref_problem.nominal_control(),
            &sphere_samples(
                SamplerKind::QmcHalton,
                s.seed ^ 0xdead_beef,
                s.reference_samples,
                s.reference_k,
            )?,
            false,
        )?
        .value;
    out.log.push(format!(
        "reference probability {reference:.7} (K={}, {} srd-qmc samples)",
        s.reference_k, s.reference_samples
    ));
    let mut csv = header(cfg, "kl-study", "k,n_samples,rmse");
    for &k in &s.kl_values {
        let mut k_cfg = cfg.clone();
        k_cfg.problem.k = k;
        let problem = k_cfg.build_linear()?;
        let u = problem.nominal_control();
        for &n in &s.schedule {
            let samples = sphere_samples(SamplerKind::QmcHalton, s.seed, n, k)?;
            let est = problem.chance_srd(&u, &samples, false)?;
            let _ = writeln!(csv, "{k},{n},{}", fmt((est.value - reference).abs()));
        }
    }
    out.files.push(("kl_study.csv".into(), csv));
    Ok(out)
}

/// Elementary-estimator variances over a sweep of symmetric bounds, with
/// the analytic bound diagnostics (linear problem only).
pub fn cmd_variance_study(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    if cfg.problem.kind != ProblemKindConfig::Linear {
        return Err(Error::Config("variance-study needs the linear problem".into()));
    }
    let mut out = CommandOutput::new();
    let s = &cfg.sampling;
    let v = &cfg.variance;
    let mut csv = header(
        cfg,
        "variance-study",
        "bound,p_mc,p_srd,v_mc,v_srd,v_mc_norm,v_srd_norm,ratio,lemma1,lemma2,violation",
    );
    for &b in &v.bounds {
        let mut b_cfg = cfg.clone();
        b_cfg.problem.lower = Some(-b);
        b_cfg.problem.upper = Some(b);
        let problem = b_cfg.build_linear()?;
        let u = problem.nominal_control();
        let k = problem.k();
        // pooled elementary variances over the repetitions
        let mut pooled_srd = 0.0;
        let mut pooled_mc = 0.0;
        let mut mean_srd = 0.0;
        let mut mean_mc = 0.0;
        let mut last_report = None;
        for rep in 0..v.reps {
            let seed = rep_seed(s.seed, rep);
            let samples = sphere_samples(SamplerKind::Mc, seed, v.n_samples, k)?;
            let srd = problem.chance_srd(&u, &samples, false)?;
            let mc = problem.chance_mc(&u, seed ^ 0x5555_5555, v.n_samples)?;
            pooled_srd += srd.sample_variance / v.reps as f64;
            pooled_mc += mc.sample_variance / v.reps as f64;
            mean_srd += srd.value / v.reps as f64;
            mean_mc += mc.value / v.reps as f64;
            if rep + 1 == v.reps {
                last_report = Some(variance_report(&srd, &mc, k)?);
            }
        }
        let rep = last_report.expect("at least one repetition");
        let _ = writeln!(
            csv,
            "{b},{},{},{},{},{},{},{},{},{},{}",
            fmt(mean_mc),
            fmt(mean_srd),
            fmt(pooled_mc),
            fmt(pooled_srd),
            fmt(pooled_mc / (1.0 - mean_mc)),
            fmt(pooled_srd / (1.0 - mean_srd)),
            fmt(pooled_srd / pooled_mc),
            fmt(rep.lemma1_bound),
            fmt(rep.lemma2_bound),
            rep.violation
        );
        out.log.push(format!(
            "bound ±{b}: p ≈ {mean_srd:.4}, V_SRD/V_MC = {:.3}",
            pooled_srd / pooled_mc
        ));
    }
    out.files.push(("variance.csv".into(), csv));
    Ok(out)
}

fn grid_csv(
    cfg: &ExperimentConfig,
    command: &str,
    grid: &crate::mesh::Grid,
    free_field: &[f64],
) -> String {
    let mut csv = header(cfg, command, "x1,x2,value");
    let full = grid.extend(free_field);
    for node in 0..grid.num_nodes() {
        let (x1, x2) = grid.coords(node);
        let _ = writeln!(csv, "{x1},{x2},{}", fmt(full[node]));
    }
    csv
}

fn node_field_csv(
    cfg: &ExperimentConfig,
    command: &str,
    grid: &crate::mesh::Grid,
    field: &[f64],
) -> String {
    let mut csv = header(cfg, command, "x1,x2,value");
    for node in 0..grid.num_nodes() {
        let (x1, x2) = grid.coords(node);
        let _ = writeln!(csv, "{x1},{x2},{}", fmt(field[node]));
    }
    csv
}

fn history_csv(cfg: &ExperimentConfig, report: &crate::sqp::SolveReport) -> String {
    let mut csv = header(
        cfg,
        "optimize",
        "iter,objective,probability,kkt,step_norm,multiplier,penalty,merit_before,merit_after",
    );
    for r in &report.history {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            fmt(r.objective),
            fmt(r.probability),
            fmt(r.kkt_residual),
            fmt(r.step_norm),
            fmt(r.multiplier),
            fmt(r.penalty),
            fmt(r.merit_before),
            fmt(r.merit_after)
        );
    }
    csv
}

fn p_tag(p: f64) -> String {
    format!("{:03}", (p * 1000.0).round() as u64)
}

/// Solve the chance-constrained problem for each target level; write the
///control grids, iterate histories, a state-sample summary and the
/// objective-versus-p table.
pub fn cmd_optimize(cfg: &ExperimentConfig, timing: bool) -> Result<CommandOutput> {
    let mut out = CommandOutput::new();
    let o = &cfg.optimize;
    let s = &cfg.sampling;
    let mut table = header(
        cfg,
        "optimize",
        "p,objective,probability,validated_probability,multiplier,kkt,iterations,termination",
    );

    match cfg.problem.kind {
        ProblemKindConfig::Linear => {
            let problem = cfg.build_linear()?;
            let k = problem.k();
            let kind = cfg.sampler_kind().unwrap_or(SamplerKind::QmcHalton);
            let samples = sphere_samples(kind, s.seed, o.saa_samples, k)?;
            let validation =
                sphere_samples(SamplerKind::QmcHalton, s.seed ^ 0xabcd, o.validation_samples, k)?;
            let mut u = problem.nominal_control();
            for &p in &o.targets {
                let t0 = Instant::now();
                let sqp_cfg = SqpConfig {
                    target_p: p,
                    max_iter: o.max_iter,
                    kkt_tol: o.kkt_tol,
                    ..SqpConfig::default()
                };
                let report = solve_sqp(&problem, &sqp_cfg, &samples, &u, Some(&validation))?;
                append_table_row(&mut table, p, &report);
                out.files.push((
                    format!("control_p{}.csv", p_tag(p)),
                    grid_csv(cfg, "optimize", &problem.grid, &report.control),
                ));
                out.files
                    .push((format!("history_p{}.csv", p_tag(p)), history_csv(cfg, &report)));
                out.files.push((
                    format!("state_summary_p{}.csv", p_tag(p)),
                    linear_state_summary(cfg, &problem, &report.control, o.state_samples, s.seed)?,
                ));
                out.log.push(optimize_log(p, &report, timing, t0));
                u = report.control;
            }
        }
        ProblemKindConfig::Bilinear => {
            let problem = cfg.build_bilinear()?;
            let k = problem.noise_dim();
            let kind = cfg.sampler_kind().unwrap_or(SamplerKind::Mc);
            let samples = sphere_samples(kind, s.seed, o.saa_samples, k)?;
            let validation =
                sphere_samples(SamplerKind::Mc, s.seed ^ 0xabcd, o.validation_samples, k)?;
            let mut u = problem.safe_control();
            for &p in &o.targets {
                let t0 = Instant::now();
                let sqp_cfg = SqpConfig {
                    target_p: p,
                    max_iter: o.max_iter,
                    kkt_tol: o.kkt_tol,
                    ..SqpConfig::default()
                };
                let report = solve_sqp(&problem, &sqp_cfg, &samples, &u, Some(&validation))?;
                append_table_row(&mut table, p, &report);
                out.files.push((
                    format!("control_p{}.csv", p_tag(p)),
                    node_field_csv(cfg, "optimize", &problem.grid, &report.control),
                ));
                out.files
                    .push((format!("history_p{}.csv", p_tag(p)), history_csv(cfg, &report)));
                let y0 = problem.mean_state(&report.control)?;
                out.files.push((
                    format!("mean_state_p{}.csv", p_tag(p)),
                    grid_csv(cfg, "optimize", &problem.grid, &y0),
                ));
                out.log.push(optimize_log(p, &report, timing, t0));
                u = report.control;
            }
        }
        _ => return Err(Error::Config("optimize needs linear or bilinear".into())),
    }
    out.files.push(("objective_vs_p.csv".into(), table));
    Ok(out)
}

fn append_table_row(table: &mut String, p: f64, report: &crate::sqp::SolveReport) {
    let term = match report.termination {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max-iterations",
        Termination::LineSearchFailed => "line-search-failed",
    };
    let _ = writeln!(
        table,
        "{p},{},{},{},{},{},{},{term}",
        fmt(report.objective),
        fmt(report.probability),
        report.validated_probability.map(fmt).unwrap_or_default(),
        fmt(report.multiplier),
        fmt(report.kkt_residual),
        report.history.len()
    );
}

fn optimize_log(
    p: f64,
    report: &crate::sqp::SolveReport,
    timing: bool,
    t0: Instant,
) -> String {
    let mut line = format!(
        "p = {p}: J = {:.6e}, phi = {:.5}, {} iterations, {:?}",
        report.objective,
        report.probability,
        report.history.len(),
        report.termination
    );
    if timing {
        let _ = write!(line, " [{:.1} s]", t0.elapsed().as_secs_f64());
    }
    line
}

/// Per-x2 maxima over x1 of the optimal-state samples (the shape of the
/// published state-summary plot): mean state, bound and sample columns.
fn linear_state_summary(
    cfg: &ExperimentConfig,
    problem: &LinearProblem,
    u: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<String> {
    let grid = &problem.grid;
    let k = problem.k();
    let y0 = problem.mean_state(u);
    let z = crate::field::sphere::gaussian_samples(seed ^ 0x00ff, n_draws, k);
    let mut fields = Vec::with_capacity(n_draws);
    for i in 0..n_draws {
        let coeffs = &z[i * k..(i + 1) * k];
        // scale by the per-mode standard deviations
        let scaled: Vec<f64> = coeffs
            .iter()
            .zip(problem.state_basis.eigenvalues())
            .map(|(c, l)| c * l.sqrt())
            .collect();
        let dev = problem.state_basis.synthesize(&scaled);
        let field: Vec<f64> = y0.iter().zip(&dev).map(|(a, b)| a + b).collect();
        fields.push(field);
    }
    let mut columns = String::from("x2,mean_max,bound");
    for i in 0..n_draws {
        let _ = write!(columns, ",sample{i}");
    }
    let mut csv = header(cfg, "optimize", &columns);
    let n = grid.n();
    for i2 in 0..n {
        let x2 = i2 as f64 * grid.h();
        let max_over_x1 = |field: &[f64]| -> f64 {
            let mut m = f64::NEG_INFINITY;
            for i1 in 0..n {
                let node = grid.node_index(i1, i2);
                let v = match grid.free_of_node(node) {
                    Some(dof) => field[dof],
                    None => 0.0,
                };
                m = m.max(v);
            }
            m
        };
        let bound = problem.upper.first().copied().unwrap_or(f64::INFINITY);
        let mut line = format!("{x2},{},{}", fmt(max_over_x1(&y0)), fmt(bound));
        for field in &fields {
            let _ = write!(line, ",{}", fmt(max_over_x1(field)));
        }
        let _ = writeln!(csv, "{line}");
    }
    Ok(csv)
}

/// Coordinate-format dump of the problem's main operator.
pub fn dump_operator(cfg: &ExperimentConfig) -> Result<String> {
    match cfg.problem.kind {
        ProblemKindConfig::Linear => Ok(cfg.build_linear()?.operator().to_coordinate_text()),
        ProblemKindConfig::Bilinear => {
            let p = cfg.build_bilinear()?;
            let m_u = crate::mesh::assemble_control_mass(&p.grid, &p.u0)?;
            Ok(m_u.to_coordinate_text())
        }
        _ => Err(Error::Config("oracle problems have no operator".into())),
    }
}
