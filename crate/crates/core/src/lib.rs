//! Estimation of latent healthcare-quality constructs from categorical
//! quality metrics.
//!
//! The crate covers the full analysis pipeline:
//!
//! - [`model`] — item response models (2PL, graded, nominal, multidimensional,
//!   latent-class) and exact conditional/marginal log-likelihoods;
//! - [`estimation`] — marginal maximum likelihood via EM with Gauss-Hermite
//!   quadrature (quasi-Monte Carlo nodes above three traits), latent-class EM
//!   with deterministic and multi-start random initialization, and
//!   outer-product-of-gradients standard errors;
//! - [`structural`] — covariate models linking race/ethnicity to latent
//!   traits or class probabilities, and disparity extraction;
//! - [`matching`] — template sampling and exact cardinality matching for
//!   covariate balance across groups;
//! - [`diagnostics`] — information criteria, likelihood-ratio tests, limited
//!   information fit (M2/RMSEA), residual correlations, varimax rotation,
//!   QQ data and held-out validation;
//! - [`scoring`] — observed (opportunity) scores, EAP trait estimates, MAP
//!   class assignment and group summaries;
//! - [`data`] — cohort files, scoring rules, preprocessing transforms,
//!   synthetic-cohort simulation and model serialization.
//!
//! With the default `parallel` feature the embarrassingly parallel inner
//! loops (E-steps over unique response patterns, multi-starts, simulation)
//! run on rayon. Disabling the feature yields a fully sequential build with
//! bit-identical results.

pub mod data;
pub mod diagnostics;
pub mod estimation;
pub mod matching;
pub mod math;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod scoring;
pub mod structural;

pub(crate) mod par;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("crossing point undefined: categories {0} and {1} have equal slopes")]
    UndefinedCrossing(usize, usize),
    #[error("identifiability: {0}")]
    Identifiability(String),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible match: {0}")]
    Infeasible(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
