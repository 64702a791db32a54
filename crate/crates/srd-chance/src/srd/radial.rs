//! Radial functions of the spherical-radial decomposition.
//!
//! For a direction `v` on the sphere the ray state at the constraint
//! points is `y_j(r) = y0_j - r * delta_j(v)`. With strictly feasible mean
//! the feasible radii form an interval `[0, rho(v)]` where
//!
//! ```text
//! rho_j
//!   upper bound: (y0_j - upper_j) / delta_j   if delta_j < 0, else inf
//!   lower bound: (y0_j - lower_j) / delta_j   if delta_j > 0, else inf
//! rho = min_j rho_j
//! ```
//!
//! Internally the reciprocal `w_j = 1 / rho_j` is maximized instead, which
//! needs no division per point and lets points be pruned by an upper bound
//! (`cap_j`) on their achievable `w`.

use crate::error::{Error, Result};

/// Which single constraint attains the minimal ray length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveBound {
    /// The ray never hits a bound (`rho = inf`).
    None,
    /// Upper bound at the given constraint-point index.
    Upper(u32),
    /// Lower bound at the given constraint-point index.
    Lower(u32),
}

/// Radial data of one sample direction.
#[derive(Debug, Clone, Copy)]
pub struct RaySample {
    /// Minimal ray length, possibly infinite.
    pub rho: f64,
    pub active: ActiveBound,
    /// Ray slope `delta` at the active point (0 when `rho = inf`).
    pub delta: f64,
    /// Second-smallest candidate within relative 1e-9 of the smallest.
    pub degenerate: bool,
}

impl RaySample {
    pub const NO_HIT: RaySample = RaySample {
        rho: f64::INFINITY,
        active: ActiveBound::None,
        delta: 0.0,
        degenerate: false,
    };
}

/// Radial functions of one sample set against one constraint system.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub rays: Vec<RaySample>,
}

impl RadialProfile {
    /// Ball oracle: every direction hits at the same radius.
    pub fn constant(rho: f64, n: usize) -> Self {
        let ray = RaySample {
            rho,
            active: ActiveBound::Upper(0),
            delta: -1.0,
            degenerate: false,
        };
        RadialProfile {
            rays: vec![ray; n],
        }
    }

    pub fn degenerate_count(&self) -> usize {
        self.rays.iter().filter(|r| r.degenerate).count()
    }

    pub fn rho_inf(&self) -> f64 {
        self.rays.iter().map(|r| r.rho).fold(f64::INFINITY, f64::min)
    }

    pub fn rho_sup(&self) -> f64 {
        self.rays.iter().map(|r| r.rho).fold(0.0, f64::max)
    }
}

/// Relative tolerance of the degeneracy diagnostic. Gradient formulas
/// assume a unique active index; random directions violate that only with
/// probability zero, so ties within this tolerance are flagged, not fatal.
pub const DEGENERACY_RTOL: f64 = 1e-9;

/// Slopes below this magnitude at the active point are treated as
/// near-tangential rays and excluded from gradient sums.
pub const TANGENTIAL_TOL: f64 = 1e-14;

/// Precomputed per-point reciprocal bound gaps for a fixed mean state and
/// fixed bounds.
#[derive(Debug, Clone)]
pub struct RadialGeometry {
    m: usize,
    /// 1 / (y0_j - upper_j), in (-inf, 0]; 0 encodes "no upper bound"
    inv_up: Vec<f64>,
    /// 1 / (y0_j - lower_j), in [0, inf); 0 encodes "no lower bound"
    inv_lo: Vec<f64>,
    /// upper_j - y0_j (can be negative or infinite)
    up_gap: Vec<f64>,
    /// y0_j - lower_j (can be negative or infinite)
    lo_gap: Vec<f64>,
    slater_ok: bool,
}

impl RadialGeometry {
    /// Build the geometry, requiring the mean to satisfy the bounds
    /// (the Slater check). The mean may sit exactly on a bound, which
    /// degenerates the ray lengths there to zero; a strict violation is an
    /// error naming the worst point.
    pub fn new(y0: &[f64], lower: &[f64], upper: &[f64]) -> Result<Self> {
        let geom = Self::new_lenient(y0, lower, upper);
        if !geom.slater_ok {
            let mut worst = (0, 0.0f64);
            for j in 0..y0.len() {
                let viol = (y0[j] - upper[j]).max(lower[j] - y0[j]);
                if viol > worst.1 {
                    worst = (j, viol);
                }
            }
            return Err(Error::Slater {
                point: worst.0,
                value: y0[worst.0],
                lower: lower[worst.0],
                upper: upper[worst.0],
            });
        }
        Ok(geom)
    }

    /// Like [`RadialGeometry::new`] but records a Slater violation instead
    /// of failing (the plain Monte Carlo estimator stays well defined).
    pub fn new_lenient(y0: &[f64], lower: &[f64], upper: &[f64]) -> Self {
        let m = y0.len();
        assert_eq!(lower.len(), m);
        assert_eq!(upper.len(), m);
        let mut inv_up = vec![0.0; m];
        let mut inv_lo = vec![0.0; m];
        let mut up_gap = vec![f64::INFINITY; m];
        let mut lo_gap = vec![f64::INFINITY; m];
        let mut slater_ok = true;
        for j in 0..m {
            if upper[j].is_finite() {
                let gap = upper[j] - y0[j];
                if gap < 0.0 {
                    slater_ok = false;
                }
                up_gap[j] = gap;
                inv_up[j] = -1.0 / gap.max(1e-300);
            }
            if lower[j].is_finite() {
                let gap = y0[j] - lower[j];
                if gap < 0.0 {
                    slater_ok = false;
                }
                lo_gap[j] = gap;
                inv_lo[j] = 1.0 / gap.max(1e-300);
            }
        }
        RadialGeometry {
            m,
            inv_up,
            inv_lo,
            up_gap,
            lo_gap,
            slater_ok,
        }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn slater_ok(&self) -> bool {
        self.slater_ok
    }

    /// Radial data for one direction given the slopes `delta_j` at all
    /// points (ray state `y0_j - r delta_j`).
    pub fn ray_from_slopes(&self, delta: &[f64]) -> RaySample {
        assert_eq!(delta.len(), self.m);
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut best_j = 0usize;
        let mut best_delta = 0.0;
        for j in 0..self.m {
            let w = (delta[j] * self.inv_up[j]).max(delta[j] * self.inv_lo[j]);
            if w > best {
                second = best;
                best = w;
                best_j = j;
                best_delta = delta[j];
            } else if w > second {
                second = w;
            }
        }
        finish_ray(best, second, best_j, best_delta)
    }

    /// Feasibility of a realized slope vector (radius folded into the
    /// slopes): whether the state `y0_j - delta_j` respects both bounds at
    /// every point. Exact also when the mean itself violates a bound.
    pub fn feasible_at_unit_radius(&self, delta: &[f64]) -> bool {
        assert_eq!(delta.len(), self.m);
        for j in 0..self.m {
            if -delta[j] > self.up_gap[j] || delta[j] > self.lo_gap[j] {
                return false;
            }
        }
        true
    }
}

fn finish_ray(best: f64, second: f64, best_j: usize, best_delta: f64) -> RaySample {
    if best <= 0.0 {
        return RaySample::NO_HIT;
    }
    // inv_up <= 0 <= inv_lo, so for best > 0 the winning product is the
    // upper one exactly when the slope is negative
    let active = if best_delta < 0.0 {
        ActiveBound::Upper(best_j as u32)
    } else {
        ActiveBound::Lower(best_j as u32)
    };
    RaySample {
        rho: 1.0 / best,
        active,
        delta: best_delta,
        degenerate: second.is_finite() && second >= best * (1.0 - DEGENERACY_RTOL),
    }
}

/// Spec-level batch entry point: radial data of many samples given their
/// slope vectors explicitly.
pub fn radial_profile(
    y0: &[f64],
    slopes_per_sample: &[Vec<f64>],
    lower: &[f64],
    upper: &[f64],
) -> Result<RadialProfile> {
    let geom = RadialGeometry::new(y0, lower, upper)?;
    let rays = slopes_per_sample
        .iter()
        .map(|d| geom.ray_from_slopes(d))
        .collect();
    Ok(RadialProfile { rays })
}

/// Direction kernel for problems whose slopes are linear in the direction:
/// `delta = P v` with a precomputed `m x k` matrix (rows scaled KL modes at
/// the constraint points).
///
/// Points are scanned in order of decreasing `cap_j = |P_j| * max_inv_j`,
/// an upper bound on the reciprocal ray length the point can produce for
/// any unit direction; the scan stops as soon as the remaining caps cannot
/// alter the best two candidates. Results are identical to the full scan.
pub struct DirectionKernel {
    k: usize,
    m: usize,
    /// row-major m x k in cap-sorted order
    rows: Vec<f64>,
    caps: Vec<f64>,
    inv_up: Vec<f64>,
    inv_lo: Vec<f64>,
    up_gap: Vec<f64>,
    lo_gap: Vec<f64>,
    /// sorted position -> original point index
    orig: Vec<u32>,
    slater_ok: bool,
}

impl DirectionKernel {
    /// `point_matrix` is row-major `m x k`: row j maps a direction to the
    /// slope at constraint point j.
    pub fn new(
        point_matrix: &[f64],
        k: usize,
        y0: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Result<Self> {
        let geom = RadialGeometry::new(y0, lower, upper)?;
        Ok(Self::from_geometry(point_matrix, k, geom))
    }

    pub fn new_lenient(
        point_matrix: &[f64],
        k: usize,
        y0: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Self {
        let geom = RadialGeometry::new_lenient(y0, lower, upper);
        Self::from_geometry(point_matrix, k, geom)
    }

    fn from_geometry(point_matrix: &[f64], k: usize, geom: RadialGeometry) -> Self {
        let m = geom.len();
        assert_eq!(point_matrix.len(), m * k);
        let mut caps: Vec<f64> = (0..m)
            .map(|j| {
                let row = &point_matrix[j * k..(j + 1) * k];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                norm * geom.inv_lo[j].max(-geom.inv_up[j])
            })
            .collect();
        let mut order: Vec<u32> = (0..m as u32).collect();
        order.sort_by(|&a, &b| {
            caps[b as usize]
                .partial_cmp(&caps[a as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut rows = vec![0.0; m * k];
        let mut inv_up = vec![0.0; m];
        let mut inv_lo = vec![0.0; m];
        let mut up_gap = vec![0.0; m];
        let mut lo_gap = vec![0.0; m];
        let mut sorted_caps = vec![0.0; m];
        for (pos, &j) in order.iter().enumerate() {
            let j = j as usize;
            rows[pos * k..(pos + 1) * k].copy_from_slice(&point_matrix[j * k..(j + 1) * k]);
            inv_up[pos] = geom.inv_up[j];
            inv_lo[pos] = geom.inv_lo[j];
            up_gap[pos] = geom.up_gap[j];
            lo_gap[pos] = geom.lo_gap[j];
            sorted_caps[pos] = caps[j];
        }
        caps = sorted_caps;
        DirectionKernel {
            k,
            m,
            rows,
            caps,
            inv_up,
            inv_lo,
            up_gap,
            lo_gap,
            orig: order,
            slater_ok: geom.slater_ok,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_points(&self) -> usize {
        self.m
    }

    pub fn slater_ok(&self) -> bool {
        self.slater_ok
    }

    #[inline]
    fn slope(&self, pos: usize, v: &[f64]) -> f64 {
        let row = &self.rows[pos * self.k..(pos + 1) * self.k];
        let mut s = 0.0;
        for (a, b) in row.iter().zip(v) {
            s += a * b;
        }
        s
    }

    /// Radial data of one unit direction (pruned scan).
    pub fn ray(&self, v: &[f64]) -> RaySample {
        debug_assert_eq!(v.len(), self.k);
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut best_pos = 0usize;
        let mut best_delta = 0.0;
        for pos in 0..self.m {
            if self.caps[pos] <= second {
                break;
            }
            let d = self.slope(pos, v);
            let w = (d * self.inv_up[pos]).max(d * self.inv_lo[pos]);
            if w > best {
                second = best;
                best = w;
                best_pos = pos;
                best_delta = d;
            } else if w > second {
                second = w;
            }
        }
        let mut ray = finish_ray(best, second, best_pos, best_delta);
        // map the sorted position back to the original point index
        ray.active = match ray.active {
            ActiveBound::None => ActiveBound::None,
            ActiveBound::Upper(p) => ActiveBound::Upper(self.orig[p as usize]),
            ActiveBound::Lower(p) => ActiveBound::Lower(self.orig[p as usize]),
        };
        ray
    }

    /// Unpruned reference scan (tests compare it against `ray`).
    pub fn ray_full(&self, v: &[f64]) -> RaySample {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut best_pos = 0usize;
        let mut best_delta = 0.0;
        for pos in 0..self.m {
            let d = self.slope(pos, v);
            let w = (d * self.inv_up[pos]).max(d * self.inv_lo[pos]);
            if w > best {
                second = best;
                best = w;
                best_pos = pos;
                best_delta = d;
            } else if w > second {
                second = w;
            }
        }
        let mut ray = finish_ray(best, second, best_pos, best_delta);
        ray.active = match ray.active {
            ActiveBound::None => ActiveBound::None,
            ActiveBound::Upper(p) => ActiveBound::Upper(self.orig[p as usize]),
            ActiveBound::Lower(p) => ActiveBound::Lower(self.orig[p as usize]),
        };
        ray
    }

    /// Indicator of a realized Gaussian slope vector (plain MC path).
    /// Exact also under a violated mean: the bounds are compared directly.
    pub fn feasible(&self, g: &[f64]) -> bool {
        debug_assert_eq!(g.len(), self.k);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        for pos in 0..self.m {
            if self.caps[pos] * gnorm.max(1.0) <= 1.0 && self.slater_ok {
                // remaining caps are sorted: nothing below can violate
                return true;
            }
            let d = self.slope(pos, g);
            if -d > self.up_gap[pos] || d > self.lo_gap[pos] {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_slope_never_hits() {
        let geom = RadialGeometry::new(&[0.0, 0.1], &[-0.3, -0.3], &[0.3, 0.3]).unwrap();
        let ray = geom.ray_from_slopes(&[0.0, 0.0]);
        assert_eq!(ray.rho, f64::INFINITY);
        assert_eq!(ray.active, ActiveBound::None);
    }

    #[test]
    fn single_point_formula() {
        // y0 = 0, bounds +-0.3, slope -0.1: ray state 0 + 0.1 r hits the
        // upper bound at rho = (0 - 0.3)/(-0.1) = 3
        let geom = RadialGeometry::new(&[0.0], &[-0.3], &[0.3]).unwrap();
        let ray = geom.ray_from_slopes(&[-0.1]);
        assert!((ray.rho - 3.0).abs() < 1e-12);
        assert_eq!(ray.active, ActiveBound::Upper(0));
        // mirrored slope hits the lower bound
        let ray = geom.ray_from_slopes(&[0.1]);
        assert!((ray.rho - 3.0).abs() < 1e-12);
        assert_eq!(ray.active, ActiveBound::Lower(0));
    }

    #[test]
    fn half_space_shifted_from_mean() {
        // single upper bound c > 0 on a linear functional: rho = c / s for
        // slopes s < 0 (i.e. state grows along the ray), inf otherwise
        let c = 0.7;
        let geom = RadialGeometry::new(&[0.0], &[f64::NEG_INFINITY], &[c]).unwrap();
        for s in [0.05, 0.4, 1.3] {
            let ray = geom.ray_from_slopes(&[-s]);
            assert!((ray.rho - c / s).abs() < 1e-12 * (c / s));
            assert_eq!(ray.active, ActiveBound::Upper(0));
        }
        assert_eq!(geom.ray_from_slopes(&[0.3]).rho, f64::INFINITY);
        assert_eq!(geom.ray_from_slopes(&[0.0]).rho, f64::INFINITY);
    }

    #[test]
    fn half_space_through_mean_matches_sign_split() {
        // boundary exactly at the mean: rho = 0 on one half, inf on the other
        let geom = RadialGeometry::new(&[0.0], &[f64::NEG_INFINITY], &[0.0]).unwrap();
        let hit = geom.ray_from_slopes(&[-1.0]);
        assert!(hit.rho <= 1e-290);
        assert_eq!(geom.ray_from_slopes(&[1.0]).rho, f64::INFINITY);
    }

    #[test]
    fn slater_violation_names_the_worst_point() {
        let err = RadialGeometry::new(&[0.0, 0.5, 0.9], &[-0.3; 3], &[0.3; 3]).unwrap_err();
        match err {
            crate::error::Error::Slater { point, value, .. } => {
                assert_eq!(point, 2);
                assert_eq!(value, 0.9);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn degeneracy_is_flagged_on_exact_ties() {
        // two identical points produce identical candidates
        let geom = RadialGeometry::new(&[0.0, 0.0], &[-0.3, -0.3], &[0.3, 0.3]).unwrap();
        let ray = geom.ray_from_slopes(&[-0.1, -0.1]);
        assert!(ray.degenerate);
        let ray = geom.ray_from_slopes(&[-0.1, -0.05]);
        assert!(!ray.degenerate);
    }

    #[test]
    fn pruned_kernel_agrees_with_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (m, k) = (200, 7);
        let p: Vec<f64> = (0..m * k).map(|_| rng.random::<f64>() - 0.5).collect();
        let y0: Vec<f64> = (0..m).map(|_| 0.4 * (rng.random::<f64>() - 0.5)).collect();
        let lower = vec![-0.9; m];
        let upper = vec![0.8; m];
        let kernel = DirectionKernel::new(&p, k, &y0, &lower, &upper).unwrap();
        for _ in 0..500 {
            let mut v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() - 0.5).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            let a = kernel.ray(&v);
            let b = kernel.ray_full(&v);
            assert_eq!(a.rho.to_bits(), b.rho.to_bits());
            assert_eq!(a.active, b.active);
            assert_eq!(a.degenerate, b.degenerate);
            // feasibility agrees with the ray length at unit radius
            assert_eq!(kernel.feasible(&v), a.rho >= 1.0);
        }
    }

    #[test]
    fn infinities_in_bounds_disable_sides() {
        let geom = RadialGeometry::new(
            &[0.0],
            &[f64::NEG_INFINITY],
            &[f64::INFINITY],
        )
        .unwrap();
        assert_eq!(geom.ray_from_slopes(&[1.0]).rho, f64::INFINITY);
        assert_eq!(geom.ray_from_slopes(&[-1.0]).rho, f64::INFINITY);
    }
}
