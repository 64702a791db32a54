//! Probability estimators and their variance diagnostics.
//!
//! Two elementary estimators are compared throughout: the indicator of the
//! feasible set under plain Gaussian sampling, and the chi-cdf of the
//! radial function under uniform sphere sampling. Both have the same mean;
//! the second never has larger variance, and two analytic bounds quantify
//! when it is much smaller.

use super::radial::{DirectionKernel, RadialProfile};
use crate::error::Result;
use crate::field::chi::{chi_cdf, chi_pdf_max};
use crate::field::sphere::SampleSet;
use rayon::prelude::*;

/// Which elementary estimator produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Indicator mean over Gaussian samples.
    Mc,
    /// Spherical-radial estimator with pseudo-random directions.
    SrdMc,
    /// Spherical-radial estimator with Halton directions.
    SrdQmc,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Mc => write!(f, "mc"),
            EstimatorKind::SrdMc => write!(f, "srd-mc"),
            EstimatorKind::SrdQmc => write!(f, "srd-qmc"),
        }
    }
}

/// A probability estimate with its per-sample contributions and variance
/// information.
#[derive(Debug, Clone)]
pub struct ProbabilityEstimate {
    pub estimator: EstimatorKind,
    /// Estimated probability, the mean of `contributions`.
    pub value: f64,
    /// `F_chi(rho_i)` for the spherical-radial estimators, 0/1 indicators
    /// for plain Monte Carlo. Canonical sample order.
    pub contributions: Vec<f64>,
    /// Unbiased sample variance of the contributions.
    pub sample_variance: f64,
    /// `p (1 - p)` for the indicator estimator.
    pub bernoulli_variance: Option<f64>,
    /// Smallest and largest radial value over the sample (SRD only).
    pub rho_inf: Option<f64>,
    pub rho_sup: Option<f64>,
    pub degenerate_count: usize,
    /// Rays excluded from the gradient because the active slope was below
    /// the tangential tolerance.
    pub tangential_excluded: usize,
    /// The mean state violated a bound (only the lenient MC path sets this).
    pub slater_warning: bool,
    /// Gradient with respect to the control, when requested.
    pub gradient: Option<Vec<f64>>,
}

/// Compensated (Kahan) sum; keeps large-N reductions accurate to a few ulps.
fn kahan_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for x in it {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

fn mean_and_unbiased_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    // constant contributions (the centered-ball case) have mean equal to
    // the common value and variance exactly zero
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return (xs.first().copied().unwrap_or(0.0), 0.0);
    }
    let mean = kahan_sum(xs.iter().copied()) / n;
    let ss = kahan_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
    (mean, ss / (n - 1.0))
}

/// Spherical-radial estimate from radial data: `mean of F_chi(rho_i)` with
/// `dof` matching the sphere dimension that produced the directions.
pub fn estimate_srd(
    profile: &RadialProfile,
    dof: usize,
    estimator: EstimatorKind,
) -> Result<ProbabilityEstimate> {
    let contributions: Vec<f64> = profile
        .rays
        .iter()
        .map(|r| chi_cdf(r.rho, dof))
        .collect::<Result<_>>()?;
    let (value, sample_variance) = mean_and_unbiased_variance(&contributions);
    Ok(ProbabilityEstimate {
        estimator,
        value,
        contributions,
        sample_variance,
        bernoulli_variance: None,
        rho_inf: Some(profile.rho_inf()),
        rho_sup: Some(profile.rho_sup()),
        degenerate_count: profile.degenerate_count(),
        tangential_excluded: 0,
        slater_warning: false,
        gradient: None,
    })
}

/// Indicator estimate from per-sample feasibility flags.
pub fn estimate_mc(feasible: &[bool], slater_warning: bool) -> ProbabilityEstimate {
    let contributions: Vec<f64> = feasible.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let (value, sample_variance) = mean_and_unbiased_variance(&contributions);
    ProbabilityEstimate {
        estimator: EstimatorKind::Mc,
        value,
        contributions,
        sample_variance,
        bernoulli_variance: Some(value * (1.0 - value)),
        rho_inf: None,
        rho_sup: None,
        degenerate_count: 0,
        tangential_excluded: 0,
        slater_warning,
        gradient: None,
    }
}

/// Fixed chunk length of the parallel sample sweeps. Partial results are
/// produced per chunk and merged in chunk order, so sums do not depend on
/// the number of worker threads.
pub const CHUNK: usize = 4096;

/// Radial data of a whole direction set (parallel, order-stable).
pub fn run_directions(kernel: &DirectionKernel, samples: &SampleSet) -> RadialProfile {
    let k = samples.k();
    let dirs = samples.directions_flat();
    let rays: Vec<_> = dirs
        .par_chunks(CHUNK * k)
        .map(|chunk| {
            chunk
                .chunks_exact(k)
                .map(|v| kernel.ray(v))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    RadialProfile { rays }
}

/// Feasibility indicators of plain Gaussian samples (row-major `n x k`).
pub fn run_indicators(kernel: &DirectionKernel, gaussians: &[f64], k: usize) -> Vec<bool> {
    gaussians
        .par_chunks(CHUNK * k)
        .map(|chunk| {
            chunk
                .chunks_exact(k)
                .map(|g| kernel.feasible(g))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// The two analytic variance bounds evaluated with empirical quantities.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub v_srd: f64,
    pub v_mc: f64,
    /// `v_srd / v_mc` (infinite when `v_mc = 0`).
    pub ratio: f64,
    /// `min((1-p)(p - F(rho_inf)), p (F(rho_sup) - p))`.
    pub lemma1_bound: f64,
    /// `Lmax^2 (rho_sup - rho_inf)^2`.
    pub lemma2_bound: f64,
    /// Empirical SRD variance exceeds the first bound by more than three
    /// standard errors of the variance estimate.
    pub violation: bool,
}

/// Compare the elementary estimator variances against the analytic bounds.
pub fn variance_report(
    est_srd: &ProbabilityEstimate,
    est_mc: &ProbabilityEstimate,
    dof: usize,
) -> Result<VarianceReport> {
    let p = est_srd.value;
    let rho_inf = est_srd.rho_inf.unwrap_or(0.0);
    let rho_sup = est_srd.rho_sup.unwrap_or(f64::INFINITY);
    let f_inf = chi_cdf(rho_inf, dof)?;
    let f_sup = chi_cdf(rho_sup, dof)?;
    let lemma1 = ((1.0 - p) * (p - f_inf)).min(p * (f_sup - p)).max(0.0);
    let rho_delta = rho_sup - rho_inf;
    let lmax = chi_pdf_max(dof)?;
    let lemma2 = if rho_delta.is_finite() {
        lmax * lmax * rho_delta * rho_delta
    } else {
        f64::INFINITY
    };

    let v_srd = est_srd.sample_variance;
    let v_mc = est_mc
        .bernoulli_variance
        .unwrap_or(est_mc.sample_variance);
    // standard error of the variance estimator from the fourth moment;
    // the bound itself is checked against the population variance of the
    // empirical distribution (for which the lemma algebra is exact)
    let n = est_srd.contributions.len() as f64;
    let m4: f64 = est_srd
        .contributions
        .iter()
        .map(|x| (x - p).powi(4))
        .sum::<f64>()
        / n;
    let se_var = ((m4 - v_srd * v_srd).max(0.0) / n).sqrt();
    let v_biased = v_srd * (n - 1.0) / n;
    let violation = v_biased > lemma1 + 3.0 * se_var + 1e-12 * lemma1.max(1e-300);
    Ok(VarianceReport {
        v_srd,
        v_mc,
        ratio: if v_mc > 0.0 { v_srd / v_mc } else { f64::INFINITY },
        lemma1_bound: lemma1,
        lemma2_bound: lemma2,
        violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::chi::chi_cdf;
    use crate::field::sphere::{sphere_samples, SamplerKind};
    use crate::srd::radial::RadialGeometry;

    #[test]
    fn all_infinite_rays_give_probability_one() {
        let profile = RadialProfile::constant(f64::INFINITY, 100);
        let est = estimate_srd(&profile, 5, EstimatorKind::SrdMc).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.sample_variance, 0.0);
    }

    #[test]
    fn all_zero_rays_give_probability_zero() {
        let profile = RadialProfile::constant(0.0, 100);
        let est = estimate_srd(&profile, 5, EstimatorKind::SrdMc).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn centered_ball_has_zero_variance_and_exact_value() {
        let radius = 1.7;
        let dof = 20;
        let profile = RadialProfile::constant(radius, 500);
        let est = estimate_srd(&profile, dof, EstimatorKind::SrdQmc).unwrap();
        assert!((est.value - chi_cdf(radius, dof).unwrap()).abs() <= 1e-12);
        assert_eq!(est.sample_variance, 0.0);
        // both lemma bounds hold trivially
        let mc = estimate_mc(&vec![true; 500], false);
        let rep = variance_report(&est, &mc, dof).unwrap();
        assert!(rep.v_srd <= rep.lemma1_bound + 1e-15);
        assert!(rep.v_srd <= rep.lemma2_bound + 1e-15);
    }

    #[test]
    fn half_space_through_mean_reaches_indicator_variance() {
        // rho is 0 or inf with equal probability; the SRD contribution is
        // itself an indicator, so no variance is saved
        let n = 100_000;
        let k = 8;
        let samples = sphere_samples(SamplerKind::Mc, 3, n, k).unwrap();
        let geom = RadialGeometry::new(&[0.0], &[f64::NEG_INFINITY], &[0.0]).unwrap();
        let rays: Vec<_> = (0..n)
            .map(|i| geom.ray_from_slopes(&samples.direction(i)[..1]))
            .collect();
        let profile = RadialProfile { rays };
        let est = estimate_srd(&profile, k, EstimatorKind::SrdMc).unwrap();
        assert!((est.value - 0.5).abs() < 0.01);
        assert!((est.sample_variance - 0.25).abs() < 0.005);
        // lemma bounds degenerate: rho_inf = 0, rho_sup = inf
        let mc = estimate_mc(
            &(0..n).map(|i| samples.direction(i)[0] <= 0.0).collect::<Vec<_>>(),
            false,
        );
        let rep = variance_report(&est, &mc, k).unwrap();
        assert!((rep.lemma1_bound - est.value * (1.0 - est.value)).abs() < 1e-12);
        assert_eq!(rep.lemma2_bound, f64::INFINITY);
        assert!(!rep.violation);
        assert!((rep.v_mc - 0.25).abs() < 0.005);
    }

    #[test]
    fn mc_variance_forms_agree_up_to_bessel() {
        let feas: Vec<bool> = (0..1000).map(|i| i % 3 != 0).collect();
        let est = estimate_mc(&feas, false);
        let n = 1000.0;
        let expect = est.value * (1.0 - est.value) * n / (n - 1.0);
        assert!((est.sample_variance - expect).abs() < 1e-12);
    }

    #[test]
    fn parallel_runs_are_order_stable() {
        // same kernel, one vs many threads must give bitwise equal output
        let (m, k) = (50, 6);
        let mut p = vec![0.0; m * k];
        let mut state = 1u64;
        for v in p.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        }
        let y0 = vec![0.0; m];
        let kernel = super::DirectionKernel::new(&p, k, &y0, &vec![-1.0; m], &vec![1.0; m]).unwrap();
        let samples = sphere_samples(SamplerKind::QmcHalton, 0, 20_000, k).unwrap();

        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let profile1 = pool1.install(|| run_directions(&kernel, &samples));
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let profile4 = pool4.install(|| run_directions(&kernel, &samples));
        for (a, b) in profile1.rays.iter().zip(&profile4.rays) {
            assert_eq!(a.rho.to_bits(), b.rho.to_bits());
            assert_eq!(a.active, b.active);
        }
        let e1 = estimate_srd(&profile1, k, EstimatorKind::SrdQmc).unwrap();
        let e4 = estimate_srd(&profile4, k, EstimatorKind::SrdQmc).unwrap();
        assert_eq!(e1.value.to_bits(), e4.value.to_bits());
    }
}
