//! Uniform samples on the unit sphere for the spherical-radial estimators.

use super::{chi, halton, normal};
use crate::error::{Error, Result};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// How sphere directions are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Normalized pseudo-random Gaussian draws.
    Mc,
    /// Halton points pushed through the inverse normal cdf, normalized.
    /// The first Halton point is skipped.
    QmcHalton,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplerKind::Mc => write!(f, "mc"),
            SamplerKind::QmcHalton => write!(f, "qmc-halton"),
        }
    }
}

/// `N` unit directions in `S^{K-1}` with provenance, plus optional chi
/// radii (needed only when full Gaussian samples are reconstructed from
/// the decomposition, e.g. for state-sample visualization).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub kind: SamplerKind,
    pub seed: u64,
    k: usize,
    n: usize,
    /// row-major `n x k`, each row unit length
    directions: Vec<f64>,
    /// chi radii with `k` degrees of freedom, if requested
    radii: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i * self.k..(i + 1) * self.k]
    }

    pub fn directions_flat(&self) -> &[f64] {
        &self.directions
    }

    pub fn radii(&self) -> Option<&[f64]> {
        self.radii.as_deref()
    }

    /// Attach chi radii drawn from the same seeded stream family.
    pub fn with_radii(mut self) -> Self {
        if self.radii.is_none() {
            // dedicated stream so direction reproducibility is unaffected
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
            let radii = (0..self.n).map(|_| chi::chi_sample(&mut rng, self.k)).collect();
            self.radii = Some(radii);
        }
        self
    }

    /// Attach explicitly chosen radii (oracles and tests).
    pub fn with_fixed_radii(mut self, radii: Vec<f64>) -> Self {
        assert_eq!(radii.len(), self.n);
        self.radii = Some(radii);
        self
    }
}

/// Generate `n` unit directions in `S^{k-1}`.
///
/// Deterministic per `(kind, seed, n, k)`: MC uses a ChaCha stream, QMC the
/// unscrambled Halton sequence (first point skipped) through the inverse
/// normal cdf. A zero-norm draw is resampled (
/// for Halton the next index is taken), though this cannot occur for the
/// inverse-normal transform of points in (0,1).
pub fn sphere_samples(kind: SamplerKind, seed: u64, n: usize, k: usize) -> Result<SampleSet> {
    if n < 1 || k < 1 {
        return Err(Error::Domain(format!("need n >= 1 and k >= 1, got n={n} k={k}")));
    }
    let mut directions = vec![0.0f64; n * k];
    match kind {
        SamplerKind::Mc => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..n {
                let row = &mut directions[i * k..(i + 1) * k];
                loop {
                    for v in row.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    if normalize(row) {
                        break;
                    }
                }
            }
        }
        SamplerKind::QmcHalton => {
            let bases = halton::first_primes(k);
            let mut point = vec![0.0f64; k];
            let mut index = 1u64; // index 0 (the origin) is skipped
            for i in 0..n {
                let row = &mut directions[i * k..(i + 1) * k];
                loop {
                    halton::halton_point(index, &bases, &mut point);
                    index += 1;
                    for (v, p) in row.iter_mut().zip(&point) {
                        *v = normal::inverse_normal_cdf(*p);
                    }
                    if normalize(row) {
                        break;
                    }
                }
            }
        }
    }
    Ok(SampleSet {
        kind,
        seed,
        k,
        n,
        directions,
        radii: None,
    })
}

/// Standard Gaussian vectors in `R^k` for the plain Monte Carlo estimator,
/// one row per sample.
pub fn gaussian_samples(seed: u64, n: usize, k: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f64; n * k];
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    out
}

fn normalize(row: &mut [f64]) -> bool {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    for v in row.iter_mut() {
        *v /= norm;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_to_1e12() {
        for kind in [SamplerKind::Mc, SamplerKind::QmcHalton] {
            let s = sphere_samples(kind, 1, 500, 7).unwrap();
            for i in 0..s.len() {
                let norm: f64 = s.direction(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mc_first_component_is_centered() {
        let n = 100_000;
        let s = sphere_samples(SamplerKind::Mc, 9, n, 2).unwrap();
        let mean: f64 = (0..n).map(|i| s.direction(i)[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean = {mean}");
    }

    #[test]
    fn hemisphere_split_is_even_in_high_dimension() {
        let n = 100_000;
        let s = sphere_samples(SamplerKind::Mc, 11, n, 20).unwrap();
        let frac = (0..n).filter(|&i| s.direction(i)[0] >= 0.0).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.01, "fraction = {frac}");
    }

    #[test]
    fn qmc_sets_are_bit_reproducible() {
        let a = sphere_samples(SamplerKind::QmcHalton, 0, 2000, 20).unwrap();
        let b = sphere_samples(SamplerKind::QmcHalton, 0, 2000, 20).unwrap();
        assert!(a
            .directions_flat()
            .iter()
            .zip(b.directions_flat())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mc_sets_are_seed_deterministic() {
        let a = sphere_samples(SamplerKind::Mc, 5, 100, 3).unwrap().with_radii();
        let b = sphere_samples(SamplerKind::Mc, 5, 100, 3).unwrap().with_radii();
        assert_eq!(a, b);
        let c = sphere_samples(SamplerKind::Mc, 6, 100, 3).unwrap();
        assert_ne!(a.directions_flat(), c.directions_flat());
    }
}
