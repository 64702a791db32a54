//! Gaussian field models, Karhunen-Loeve expansions and all samplers.

pub mod chi;
pub mod halton;
pub mod kl;
pub mod normal;
pub mod sphere;

pub use chi::{chi_cdf, chi_pdf, chi_pdf_max, chi_quantile, chi_sample};
pub use kl::{
    boundary_kl, kl_from_csv, kl_to_csv, samples_to_csv, state_kl, DomainFieldModel, KlBasis,
    KlTarget,
};
pub use normal::inverse_normal_cdf;
pub use sphere::{gaussian_samples, sphere_samples, SampleSet, SamplerKind};
