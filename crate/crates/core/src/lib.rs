//! Sparse-group factor models for high-dimensional time series.
//!
//! The crate estimates a loading matrix whose columns are sparse both
//! entrywise and at the level of pre-specified variable groups. The pipeline
//! is:
//!
//! 1. [`spectral`]: lagged autocovariances, the accumulated matrix `M`, and
//!    its leading eigenvectors (an orthonormal basis of the loading space).
//! 2. [`admm`]: an ADMM solver for one unit-norm sparse-group direction with
//!    MCP penalties on entries and on group norms.
//! 3. [`estimator`]: the sequential column-by-column estimate, factor
//!    extraction, BIC and two-step tuning of the penalty levels.
//!
//! Around that sit data ingestion ([`panel`]), evaluation metrics
//! ([`metrics`]), the Monte-Carlo designs ([`simulation`]), rolling VAR(1)
//! forecasting ([`forecast`]), artifact persistence ([`artifacts`]) and the
//! command-line front end ([`cli`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // comparisons written to reject NaN

pub mod admm;
pub mod artifacts;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod forecast;
pub mod linalg;
pub mod metrics;
pub mod panel;
pub mod penalty;
pub mod rng;
pub mod simulation;
pub mod spectral;

pub use admm::{solve_direction, AdmmOptions, DirectionProblem, DirectionSolution, SolverReport};
pub use error::{Error, Result};
pub use estimator::{
    compute_bic, estimate_loadings, extract_factors, tune_lambdas, EstimateOptions, FactorSeries,
    LoadingEstimate, TuneOptions, TuningResult,
};
pub use metrics::{forecast_errors, sparsity_confusion, subspace_distance, ConfusionSummary};
pub use panel::{Block, GroupStructure, TimeSeriesPanel, TransformCode};
pub use penalty::PenaltyConfig;
pub use spectral::{build_m_hat, leading_eigvecs, sample_autocov, SpectralBasis};
