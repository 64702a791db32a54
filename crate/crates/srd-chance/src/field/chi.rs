//! One-dimensional chi distribution with integer degrees of freedom.
//!
//! The radius of a K-dimensional standard Gaussian vector is
//! chi-distributed with K degrees of freedom. The estimators evaluate the
//! cdf at ray lengths that may be infinite, with the conventions
//! `F(inf) = 1` and `f(inf) = 0` hard-coded.

use crate::error::{Error, Result};
use statrs::function::gamma::{gamma_lr, ln_gamma};

/// `F_chi(r)` via the regularized lower incomplete gamma at `r^2 / 2`.
pub fn chi_cdf(r: f64, dof: usize) -> Result<f64> {
    check_dof(dof)?;
    if r.is_nan() || r < 0.0 {
        return Err(Error::Domain(format!("chi_cdf needs r >= 0, got {r}")));
    }
    let x = 0.5 * r * r;
    // guard the incomplete gamma against under/overflowed arguments
    if x == 0.0 {
        return Ok(0.0);
    }
    if !x.is_finite() {
        return Ok(1.0);
    }
    Ok(gamma_lr(dof as f64 / 2.0, x))
}

/// Chi density; `f(inf) = 0`, and for one degree of freedom the density is
/// finite at zero (`sqrt(2/pi)`).
pub fn chi_pdf(r: f64, dof: usize) -> Result<f64> {
    check_dof(dof)?;
    if r.is_nan() || r < 0.0 {
        return Err(Error::Domain(format!("chi_pdf needs r >= 0, got {r}")));
    }
    if r == f64::INFINITY {
        return Ok(0.0);
    }
    let k = dof as f64;
    if r == 0.0 {
        return Ok(if dof == 1 {
            (2.0 / std::f64::consts::PI).sqrt()
        } else {
            0.0
        });
    }
    let ln = (k - 1.0) * r.ln() - 0.5 * r * r - (0.5 * k - 1.0) * std::f64::consts::LN_2
        - ln_gamma(0.5 * k);
    Ok(ln.exp())
}

/// Maximum of the chi density (attained at `sqrt(dof - 1)`).
pub fn chi_pdf_max(dof: usize) -> Result<f64> {
    check_dof(dof)?;
    chi_pdf(((dof - 1) as f64).sqrt(), dof)
}

/// Inverse cdf by Newton iteration from a Wilson-Hilferty start, with a
/// bisection safeguard.
pub fn chi_quantile(p: f64, dof: usize) -> Result<f64> {
    check_dof(dof)?;
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::Domain(format!("chi_quantile needs p in [0,1], got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    let k = dof as f64;
    // Wilson-Hilferty start for the chi-square quantile
    let z = super::normal::inverse_normal_cdf(p);
    let c = 2.0 / (9.0 * k);
    let wh = k * (1.0 - c + z * c.sqrt()).powi(3);
    let mut hi = wh.max(1.0).sqrt();
    while chi_cdf(hi, dof)? < p {
        hi *= 2.0;
    }
    let mut lo = 0.0_f64;
    let mut r = wh.max(0.0).sqrt().clamp(hi * 1e-6, hi);
    for _ in 0..200 {
        let fr = chi_cdf(r, dof)?;
        if fr > p {
            hi = r;
        } else {
            lo = r;
        }
        if fr == p {
            break;
        }
        let dr = (fr - p) / chi_pdf(r, dof)?.max(f64::MIN_POSITIVE);
        let next = r - dr;
        let next = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        if (next - r).abs() <= 1e-16 * r.max(1e-300) {
            break;
        }
        r = next;
    }
    Ok(r)
}

/// One chi draw (square root of a Gamma(dof/2, scale 2) draw).
pub fn chi_sample<R: rand::Rng + ?Sized>(rng: &mut R, dof: usize) -> f64 {
    use rand_distr::Distribution;
    let gamma = rand_distr::Gamma::new(dof as f64 / 2.0, 2.0).expect("dof >= 1");
    gamma.sample(rng).sqrt()
}

fn check_dof(dof: usize) -> Result<()> {
    if dof == 0 {
        return Err(Error::Domain("chi distribution needs dof >= 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn endpoint_conventions() {
        for dof in [1, 5, 20, 900] {
            assert_eq!(chi_cdf(0.0, dof).unwrap(), 0.0);
            assert_eq!(chi_cdf(f64::INFINITY, dof).unwrap(), 1.0);
            assert_eq!(chi_pdf(f64::INFINITY, dof).unwrap(), 0.0);
        }
        assert!(chi_cdf(-1.0, 3).is_err());
        assert!(chi_cdf(1.0, 0).is_err());
    }

    #[test]
    fn dof_one_matches_folded_normal() {
        // |N(0,1)| has cdf erf(r / sqrt(2)); reference digits from a
        // 30-digit computation of the closed form
        let cases = [
            (0.1, 0.0796556745540579629308),
            (0.5, 0.3829249225480262072754),
            (1.0, 0.6826894921370858971704),
            (2.0, 0.9544997361036415855994),
            (4.0, 0.9999366575163337601575),
        ];
        for (r, expect) in cases {
            assert!((chi_cdf(r, 1).unwrap() - expect).abs() < 1e-14, "r={r}");
        }
    }

    #[test]
    fn quantile_round_trip() {
        // rounding F(r) to f64 destroys radius information at a rate of
        // one cdf ulp per unit density, so the achievable reconstruction
        // error is 1e-8 plus that propagation term (which only matters in
        // the far upper tail)
        for dof in [1usize, 5, 20] {
            let mut r = 1e-3;
            while r <= 10.0 {
                let p = chi_cdf(r, dof).unwrap();
                if p > 0.0 && p < 1.0 {
                    let back = chi_quantile(p, dof).unwrap();
                    let cap = 4.0 * (f64::EPSILON * p) / chi_pdf(r, dof).unwrap();
                    assert!(
                        (back - r).abs() <= 1e-8 * r.max(1.0) + cap,
                        "dof={dof} r={r} back={back}"
                    );
                }
                r *= 1.6;
            }
        }
    }

    #[test]
    fn density_max_location() {
        for dof in [2usize, 5, 20] {
            let m = chi_pdf_max(dof).unwrap();
            let mode = ((dof - 1) as f64).sqrt();
            for dr in [-0.05, 0.05] {
                assert!(chi_pdf(mode + dr, dof).unwrap() <= m);
            }
        }
        assert!((chi_pdf_max(1).unwrap() - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sampling_matches_cdf_by_kolmogorov_smirnov() {
        let n = 100_000;
        let dof = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut draws: Vec<f64> = (0..n).map(|_| chi_sample(&mut rng, dof)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks = 0.0f64;
        for (i, &r) in draws.iter().enumerate() {
            let f = chi_cdf(r, dof).unwrap();
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        // 1% critical value
        assert!(ks <= 1.63 / (n as f64).sqrt(), "ks = {ks}");
    }
}
