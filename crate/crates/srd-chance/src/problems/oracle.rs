//! Analytic oracle constraint sets with known probabilities, used to
//! validate the estimators end to end: a ball centered at the mean (the
//! radial function is constant, so the spherical-radial estimator has zero
//! variance) and a half-space (whose boundary may pass through the mean,
//! where no variance is saved).

use crate::error::Result;
use crate::field::sphere::{gaussian_samples, SampleSet, SamplerKind};
use crate::srd::{
    estimate_mc, estimate_srd, run_directions, run_indicators, DirectionKernel, EstimatorKind,
    ProbabilityEstimate, RadialProfile,
};

#[derive(Debug, Clone, Copy)]
pub enum OracleConfig {
    /// `|z| <= radius` in the whitened coordinates.
    Ball { radius: f64 },
    /// `z_1 <= offset` (offset 0 puts the boundary through the mean).
    HalfSpace { offset: f64 },
}

pub struct OracleProblem {
    pub config: OracleConfig,
    pub k: usize,
}

impl OracleProblem {
    pub fn new(config: OracleConfig, k: usize) -> Self {
        OracleProblem { config, k }
    }

    fn kernel(&self) -> Option<DirectionKernel> {
        match self.config {
            OracleConfig::Ball { .. } => None,
            OracleConfig::HalfSpace { offset } => {
                let mut row = vec![0.0; self.k];
                row[0] = 1.0;
                Some(DirectionKernel::new_lenient(
                    &row,
                    self.k,
                    &[0.0],
                    &[f64::NEG_INFINITY],
                    &[offset],
                ))
            }
        }
    }

    pub fn chance_srd(&self, samples: &SampleSet) -> Result<ProbabilityEstimate> {
        let estimator = match samples.kind {
            SamplerKind::Mc => EstimatorKind::SrdMc,
            SamplerKind::QmcHalton => EstimatorKind::SrdQmc,
        };
        let profile = match self.config {
            OracleConfig::Ball { radius } => RadialProfile::constant(radius, samples.len()),
            OracleConfig::HalfSpace { .. } => {
                let kernel = self.kernel().expect("halfspace has a kernel");
                run_directions(&kernel, samples)
            }
        };
        estimate_srd(&profile, self.k, estimator)
    }

    pub fn chance_mc(&self, seed: u64, n: usize) -> ProbabilityEstimate {
        let z = gaussian_samples(seed, n, self.k);
        let feasible: Vec<bool> = match self.config {
            OracleConfig::Ball { radius } => z
                .chunks_exact(self.k)
                .map(|zi| zi.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius)
                .collect(),
            OracleConfig::HalfSpace { .. } => {
                let kernel = self.kernel().expect("halfspace has a kernel");
                run_indicators(&kernel, &z, self.k)
            }
        };
        estimate_mc(&feasible, false)
    }

    /// Exact probability of the constraint set.
    pub fn exact_probability(&self) -> Result<f64> {
        match self.config {
            OracleConfig::Ball { radius } => crate::field::chi::chi_cdf(radius, self.k),
            OracleConfig::HalfSpace { offset } => {
                Ok(crate::field::normal::normal_cdf(offset))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sphere::sphere_samples;

    #[test]
    fn ball_estimate_is_exact_with_zero_variance() {
        let k = 20;
        let oracle = OracleProblem::new(OracleConfig::Ball { radius: 3.0 }, k);
        let samples = sphere_samples(SamplerKind::QmcHalton, 0, 1000, k).unwrap();
        let est = oracle.chance_srd(&samples).unwrap();
        assert_eq!(est.sample_variance, 0.0);
        assert!((est.value - oracle.exact_probability().unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn halfspace_offset_matches_normal_cdf() {
        let k = 6;
        let oracle = OracleProblem::new(OracleConfig::HalfSpace { offset: 0.8 }, k);
        let n = 200_000;
        let samples = sphere_samples(SamplerKind::Mc, 5, n, k).unwrap();
        let est = oracle.chance_srd(&samples).unwrap();
        let exact = oracle.exact_probability().unwrap();
        let se = (est.sample_variance / n as f64).sqrt();
        assert!(
            (est.value - exact).abs() <= 4.0 * se + 1e-4,
            "value {} exact {exact} se {se}",
            est.value
        );
        let mc = oracle.chance_mc(7, n);
        let se_mc = (mc.sample_variance / n as f64).sqrt();
        assert!((mc.value - exact).abs() <= 4.0 * se_mc + 1e-4);
    }
}
