//! Spherical-radial probability estimation for joint state constraints on
//! elliptic PDEs, and chance-constrained optimal control built on it.
//!
//! The library has three layers:
//!
//! * [`mesh`] and [`field`] provide the discrete machinery: structured
//!   grids, sparse elliptic operators with reusable Cholesky factors,
//!   Gaussian field models, Karhunen-Loeve bases, and sphere/chi samplers.
//! * [`srd`] implements the estimators: radial functions of a direction,
//!   the chi-cdf probability estimator, its variance diagnostics and the
//!   gradient assembly.
//! * [`problems`] and [`sqp`] define two concrete control problems (a
//!   linear tracking problem with uncertain Neumann data and a bilinear
//!   control problem with an uncertain source) and solve them under a
//!   probability constraint with an SQP method.
//!
//! The `srd-chance` binary drives reproducible experiments and writes CSV;
//! see the book under `book/` for a guided tour.

pub mod cli;
pub mod error;
pub mod field;
pub mod mesh;
pub mod problems;
pub mod sqp;
pub mod srd;

pub use error::{Error, Result};
