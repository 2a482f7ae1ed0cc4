//! Bradley-Terry pattern models for complete rankings, with respondent
//! covariates and nonparametric mass-point (latent class) random effects
//! fitted by multi-start EM.

// Negated float comparisons are deliberate: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod app;
pub mod error;
pub mod fit;
pub mod inference;
mod linalg;
pub mod model;
pub mod posthoc;
pub mod ranking;

pub use error::{Error, Result};
