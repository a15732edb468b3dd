//! Statistical and numerical kernels shared by the metric modules.
//!
//! Everything here is a pure function over slices or [`Matrix`] values.
//! Logarithms are natural throughout, so entropy, KL, JSD and perplexity
//! all live on the nat scale.

mod adf;
mod dtw;
mod info;
mod linalg;
mod stats;
mod transport;

pub use adf::{adf_test, default_max_lag, AdfDecision, AdfResult, ADF_CRITICAL_5PCT};
pub use dtw::dtw;
pub use info::{entropy, jsd, kl, KL_EPSILON};
pub use linalg::{cosine_distance, mse, pca, ssim, symmetric_eigen, Matrix, Pca};
pub use stats::{gini, mean_std, percentile};
pub use transport::{frechet_gaussian, wasserstein_ot};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("series too short: need at least {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("degenerate series: {0}")]
    DegenerateSeries(&'static str),
    #[error("empty series")]
    EmptySeries,
    #[error("all counts are zero")]
    AllZero,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("rank deficient: requested {requested} components, only {achieved} available")]
    RankDeficient { requested: usize, achieved: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
