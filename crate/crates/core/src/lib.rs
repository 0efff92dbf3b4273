//! Deflate-learn-inflate (DLI) forecasting of distribution flows with kernel
//! Koopman operator regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense factorizations, eigen solvers and resolvent norms.
//! * [`kernels`]: kernels, normalized Gram blocks, centering and closed-form
//!   Gaussian kernel integrals.
//! * [`metrics`]: weighted measures, MMD, relative MMD and CRPS.
//! * [`estimators`]: KRR / PCR / RRR fits in centered (DLI) and uncentered form.
//! * [`forecaster`]: evolution of an initial empirical measure under a fit.
//! * [`spectral`]: stability diagnostics of evolution matrices.
//! * [`dynamics`]: Ornstein-Uhlenbeck and CIR ground-truth systems.
//! * [`cli`]: configuration, file formats and experiment harness.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod forecaster;
pub mod kernels;
pub mod metrics;
pub mod numerics;
pub mod spectral;

pub use error::{Error, Result};
