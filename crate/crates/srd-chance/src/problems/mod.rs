//! The two concrete chance-constrained control problems.

mod bilinear;
mod linear;
mod oracle;

pub use bilinear::{BilinearConfig, BilinearProblem, NOISE_SCALE_DEFAULT};
pub use linear::{LinearConfig, LinearProblem};
pub use oracle::{OracleConfig, OracleProblem};

use crate::error::Result;
use crate::field::sphere::SampleSet;
use crate::srd::ProbabilityEstimate;

/// Common optimizer-facing surface of the control problems.
pub trait ControlProblem: Sync {
    fn control_dim(&self) -> usize;

    fn objective(&self, u: &[f64]) -> Result<f64>;

    /// Plain (unweighted) gradient of the objective: directional
    /// derivatives are dot products with it.
    fn objective_gradient(&self, u: &[f64]) -> Result<Vec<f64>>;

    /// Spherical-radial probability estimate at `u`, with its gradient
    /// when requested.
    fn chance(&self, u: &[f64], samples: &SampleSet, want_gradient: bool)
        -> Result<ProbabilityEstimate>;

    /// Smallest gap between the mean state and the bounds over the
    /// constraint points; positive iff the mean is strictly feasible.
    fn slater_margin(&self, u: &[f64]) -> Result<f64>;

    /// A control whose mean state is safely inside the bounds, used by the
    /// restoration phase for infeasible starts.
    fn safe_control(&self) -> Vec<f64>;

    /// Target probability level of the chance constraint.
    fn target_probability(&self) -> f64;

    /// Exact dense objective Hessian when cheaply available; seeds the
    /// optimizer's curvature model.
    fn objective_hessian(&self) -> Option<nalgebra::DMatrix<f64>> {
        None
    }
}
