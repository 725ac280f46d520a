//! Space-saving one-pass nonparametric regression.
//!
//! `onepass` estimates a regression function `m(t) = E[Y | T = t]` from a
//! stream of `(t, y)` batches while storing only `O(q)` reals, where `q` is
//! the number of basis functions in use. The regression side keeps a
//! running vector of basis cross-products; the Gram matrix that a batch
//! least-squares fit would need is rebuilt at query time from a streaming
//! orthogonal-series estimate of the predictor density. New basis functions
//! are pre-estimated on a schedule before they enter the fit.
//!
//! The crate also ships the experiment harness used to study the
//! estimator (Monte Carlo RMISE, rate and memory phase-transition runs), a
//! simulator of the index-problem protocol that lower-bounds the memory of
//! any one-pass estimator, and a small line-delimited JSON service.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod density;
pub mod engine;
pub mod pipeline;
pub mod error;
pub mod harness;
pub mod lowerbound;
pub mod quadrature;
pub mod schedule;
pub mod service;
mod slots;
pub mod sum;
pub mod targets;
pub mod tuning;

pub use basis::{BasisFamily, BasisSpec, PenaltyKind, PenaltySpec, ResidualNorm};
pub use density::{DensityModel, DensityState, NormalizedDensity};
pub use engine::{
    batch_fit, Checkpoint, DensityConfig, Fit, NormalEquations, Regressor, RegressorConfig,
    StreamBatch,
};
pub use error::{Error, Result};
pub use schedule::SchedulerConfig;
