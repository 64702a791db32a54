//! Spherical-radial probability estimators, variance diagnostics and
//! gradient assembly of the sampled probability function.

mod estimate;
mod radial;

pub use estimate::{
    estimate_mc, estimate_srd, run_directions, run_indicators, variance_report, EstimatorKind,
    ProbabilityEstimate, VarianceReport, CHUNK,
};
pub use radial::{
    radial_profile, ActiveBound, DirectionKernel, RadialGeometry, RadialProfile, RaySample,
    DEGENERACY_RTOL, TANGENTIAL_TOL,
};

use crate::error::Result;
use crate::field::chi::chi_pdf;

/// Point-load accumulation common to the probability gradients: every
/// finite ray adds `f_chi(rho_i) / delta_i / N` at its active constraint
/// point (the sign of `delta` encodes the bound side). Returns the loads
/// per constraint point and the count of near-tangential rays excluded.
pub fn gradient_point_loads(
    profile: &RadialProfile,
    dof: usize,
    num_points: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = profile.rays.len() as f64;
    let mut loads = vec![0.0; num_points];
    let mut excluded = 0usize;
    for ray in &profile.rays {
        let point = match ray.active {
            ActiveBound::None => continue,
            ActiveBound::Upper(j) | ActiveBound::Lower(j) => j as usize,
        };
        if ray.delta.abs() < TANGENTIAL_TOL {
            excluded += 1;
            continue;
        }
        let density = chi_pdf(ray.rho, dof)?;
        loads[point] += density / ray.delta / n;
    }
    Ok((loads, excluded))
}
