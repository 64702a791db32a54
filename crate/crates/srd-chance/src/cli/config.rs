//! Experiment configuration: a TOML file with sections for the problem,
//! the samplers and the optimizer. Defaults mirror the reference
//! experiments (linear: n=128, K=20, gamma=4, alpha=1e-5, bounds ±0.3;
//! bilinear: n=24, alpha=0.1, ybar=1.10).

use crate::error::{Error, Result};
use crate::field::sphere::SamplerKind;
use crate::mesh::MassLumping;
use crate::problems::{
    BilinearConfig, BilinearProblem, LinearConfig, LinearProblem, OracleConfig, OracleProblem,
    NOISE_SCALE_DEFAULT,
};
use crate::srd::EstimatorKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKindConfig {
    Linear,
    Bilinear,
    Ball,
    Halfspace,
}

fn default_true_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKindConfig,
    #[serde(default = "defaults::n")]
    pub n: usize,
    /// state KL truncation (linear) / retained noise modes (bilinear) /
    /// sphere dimension (oracles)
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::alpha_reg")]
    pub alpha_reg: f64,
    #[serde(default = "defaults::alpha_cov")]
    pub alpha_cov: f64,
    #[serde(default = "defaults::noise_scale")]
    pub noise_scale: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    #[serde(default = "defaults::ybar")]
    pub ybar: f64,
    #[serde(default = "default_true_stride")]
    pub constraint_stride: usize,
    /// ball radius / halfspace offset for the oracle modes
    #[serde(default)]
    pub radius: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub lumped_mass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default = "defaults::estimator")]
    pub estimator: EstimatorKind,
    #[serde(default = "defaults::n_samples")]
    pub n_samples: usize,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// sample counts of the convergence sweeps (log grid by default)
    #[serde(default = "defaults::schedule")]
    pub schedule: Vec<usize>,
    #[serde(default = "defaults::reps")]
    pub reps: usize,
    #[serde(default = "defaults::reference_samples")]
    pub reference_samples: usize,
    #[serde(default = "defaults::kl_values")]
    pub kl_values: Vec<usize>,
    #[serde(default = "defaults::reference_k")]
    pub reference_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    #[serde(default = "defaults::bounds")]
    pub bounds: Vec<f64>,
    #[serde(default = "defaults::var_reps")]
    pub reps: usize,
    #[serde(default = "defaults::var_samples")]
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(default = "defaults::targets")]
    pub targets: Vec<f64>,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::kkt_tol")]
    pub kkt_tol: f64,
    #[serde(default = "defaults::saa_samples")]
    pub saa_samples: usize,
    #[serde(default = "defaults::validation_samples")]
    pub validation_samples: usize,
    /// state draws in the Fig-style summary output
    #[serde(default = "defaults::state_samples")]
    pub state_samples: usize,
}

mod defaults {
    use crate::srd::EstimatorKind;

    pub fn n() -> usize {
        128
    }
    pub fn k() -> usize {
        20
    }
    pub fn gamma() -> f64 {
        4.0
    }
    pub fn alpha_reg() -> f64 {
        1e-5
    }
    pub fn alpha_cov() -> f64 {
        0.1
    }
    pub fn noise_scale() -> f64 {
        super::NOISE_SCALE_DEFAULT
    }
    pub fn ybar() -> f64 {
        1.10
    }
    pub fn estimator() -> EstimatorKind {
        EstimatorKind::SrdQmc
    }
    pub fn n_samples() -> usize {
        100_000
    }
    pub fn seed() -> u64 {
        42
    }
    pub fn schedule() -> Vec<usize> {
        vec![10, 22, 46, 100, 215, 464, 1000, 2154, 4641, 10_000, 21_544, 46_416, 100_000]
    }
    pub fn reps() -> usize {
        50
    }
    pub fn reference_samples() -> usize {
        10_000_000
    }
    pub fn kl_values() -> Vec<usize> {
        vec![10, 15, 20]
    }
    pub fn reference_k() -> usize {
        30
    }
    pub fn bounds() -> Vec<f64> {
        vec![0.5, 0.6, 0.7, 0.8, 0.9]
    }
    pub fn var_reps() -> usize {
        100
    }
    pub fn var_samples() -> usize {
        500
    }
    pub fn targets() -> Vec<f64> {
        vec![0.9]
    }
    pub fn max_iter() -> usize {
        150
    }
    pub fn kkt_tol() -> f64 {
        1e-6
    }
    pub fn saa_samples() -> usize {
        20_000
    }
    pub fn validation_samples() -> usize {
        200_000
    }
    pub fn state_samples() -> usize {
        15
    }
}

fn default_sampling() -> SamplingSection {
    toml::from_str("").expect("all sampling fields have defaults")
}

fn default_variance() -> VarianceSection {
    toml::from_str("").expect("all variance fields have defaults")
}

fn default_optimize() -> OptimizeSection {
    toml::from_str("").expect("all optimize fields have defaults")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingSection,
    #[serde(default = "default_variance")]
    pub variance: VarianceSection,
    #[serde(default = "default_optimize")]
    pub optimize: OptimizeSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hex digest of the effective configuration, embedded in every CSV.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Reduced-cost preset for continuous integration: coarser grid,
    /// capped schedules, fewer repetitions.
    pub fn apply_fast_profile(&mut self) {
        if self.problem.kind == ProblemKindConfig::Linear && self.problem.n > 64 {
            self.problem.n = 64;
        }
        self.sampling.schedule.retain(|&n| n <= 10_000);
        self.sampling.reps = self.sampling.reps.min(20);
        self.sampling.n_samples = self.sampling.n_samples.min(100_000);
        self.sampling.reference_samples = self.sampling.reference_samples.min(1_000_000);
        self.optimize.saa_samples = self.optimize.saa_samples.min(10_000);
        self.optimize.validation_samples = self.optimize.validation_samples.min(100_000);
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if let (Some(lo), Some(up)) = (p.lower, p.upper) {
            if up < lo {
                return Err(Error::Config(format!(
                    "upper bound {up} below lower bound {lo}"
                )));
            }
        }
        if p.n < 3 {
            return Err(Error::Config(format!("grid needs n >= 3, got {}", p.n)));
        }
        if p.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if matches!(p.kind, ProblemKindConfig::Ball) && p.radius <= 0.0 {
            return Err(Error::Config("ball oracle needs a positive radius".into()));
        }
        for &t in &self.optimize.targets {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::Config(format!("target p {t} outside (0,1)")));
            }
        }
        if self.sampling.schedule.is_empty() {
            return Err(Error::Config("sampling schedule is empty".into()));
        }
        for &b in &self.variance.bounds {
            if b <= 0.0 {
                return Err(Error::Config(format!("variance bound {b} not positive")));
            }
        }
        Ok(())
    }

    pub fn build_linear(&self) -> Result<LinearProblem> {
        LinearProblem::new(&LinearConfig {
            n: self.problem.n,
            k: self.problem.k,
            gamma: self.problem.gamma,
            alpha_reg: self.problem.alpha_reg,
            lower: self.problem.lower,
            upper: self.problem.upper,
            constraint_stride: self.problem.constraint_stride,
            target_p: self.optimize.targets.first().copied().unwrap_or(0.9),
        })
    }

    pub fn build_bilinear(&self) -> Result<BilinearProblem> {
        BilinearProblem::new(&BilinearConfig {
            n: self.problem.n,
            alpha_cov: self.problem.alpha_cov,
            noise_scale: self.problem.noise_scale,
            noise_modes: self.problem.k.max(16),
            upper: self.problem.ybar,
            constraint_stride: self.problem.constraint_stride,
            target_p: self.optimize.targets.first().copied().unwrap_or(0.84),
            lumping: if self.problem.lumped_mass {
                MassLumping::Lumped
            } else {
                MassLumping::Consistent
            },
        })
    }

    pub fn build_oracle(&self) -> Result<OracleProblem> {
        let cfg = match self.problem.kind {
            ProblemKindConfig::Ball => OracleConfig::Ball {
                radius: self.problem.radius,
            },
            ProblemKindConfig::Halfspace => OracleConfig::HalfSpace {
                offset: self.problem.offset,
            },
            _ => return Err(Error::Config("not an oracle problem".into())),
        };
        Ok(OracleProblem::new(cfg, self.problem.k))
    }

    pub fn sampler_kind(&self) -> Option<SamplerKind> {
        match self.sampling.estimator {
            EstimatorKind::Mc => None,
            EstimatorKind::SrdMc => Some(SamplerKind::Mc),
            EstimatorKind::SrdQmc => Some(SamplerKind::QmcHalton),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\nkind = \"linear\"\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.problem.n, 128);
        assert_eq!(cfg.problem.k, 20);
        assert_eq!(cfg.sampling.seed, 42);
        assert_eq!(cfg.variance.bounds.len(), 5);
    }

    #[test]
    fn round_trip_is_lossless() {
        let cfg = ExperimentConfig::from_toml(
            "[problem]\nkind = \"bilinear\"\nn = 24\nybar = 1.2\n[sampling]\nseed = 7\n",
        )
        .unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn inverted_bounds_fail_validation() {
        let bad = "[problem]\nkind = \"linear\"\nlower = 0.5\nupper = -0.5\n";
        assert!(matches!(
            ExperimentConfig::from_toml(bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = "[problem]\nkind = \"linear\"\nbogus = 1\n";
        assert!(ExperimentConfig::from_toml(bad).is_err());
    }

    #[test]
    fn fast_profile_caps_work() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.apply_fast_profile();
        assert_eq!(cfg.problem.n, 64);
        assert!(cfg.sampling.schedule.iter().all(|&n| n <= 10_000));
        assert_eq!(cfg.sampling.reps, 20);
    }
}
