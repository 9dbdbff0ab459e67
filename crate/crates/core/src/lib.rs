//! Improves internal-study regression estimates by fusing summary estimates
//! from an external study that fit a (possibly misspecified) model on shared
//! covariates.
//!
//! The pipeline: fit the external model's estimating equations on internal
//! data alongside the internal model, estimate the joint sampling covariance
//! of both solutions with a stacked sandwich, then move the internal estimate
//! along the covariance-implied regression onto the transformed external
//! discrepancy (the conditional estimator). A James-Stein step shrinks back
//! toward the internal-only estimate when the discrepancy is large, so the
//! fused estimate never does asymptotically worse than ignoring the external
//! study. Uncertainty comes from a generalized (multiplier) bootstrap that
//! re-solves the internal equations under unit-mean exponential weights while
//! holding the external summary fixed.
//!
//! Estimating-equation families and parameter transformations are strategy
//! objects selected by name at runtime (`equations::registry`,
//! `transform::build`), so run configurations can mix linear, GLM, weighted
//! centered least squares, log-relative-risk, and stacked surrogate models
//! without code changes.
//!
//! All covariances at module boundaries are on the estimate scale, i.e. they
//! approximate `Cov(estimate)` directly with the 1/n factor already applied.
//! Sample-size ratios between the studies enter only through those
//! magnitudes, never as explicit constants.

pub mod bootstrap;
pub mod equations;
pub mod error;
pub mod fusion;
pub mod io;
pub mod numerics;
pub mod sandwich;
pub mod scenarios;
pub mod shrinkage;
pub mod transform;
pub mod zsolve;

pub use error::{Error, Result};
