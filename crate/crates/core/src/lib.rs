//! Numerical core of the `gapfill` imputation engine.
//!
//! This crate is `no_std` and only needs an allocator. It holds everything
//! that is pure computation over in-memory values:
//!
//! - [`data`]: road segments, per-segment series, cohorts, cohort selection,
//!   synthetic cohorts and min-max normalization.
//! - [`masking`]: missingness mechanisms, the ground-truth ledger and the
//!   `(z, m, delta)` triplets fed to the recurrent model.
//! - [`nncore`]: dense layers, the GRU cell, backpropagation through time,
//!   Adam, initialization and a finite-difference gradient checker.
//! - [`mrnn`]: the multi-directional recurrent imputer (lagged bidirectional
//!   GRU interpolation followed by a zero-diagonal imputation layer).
//! - [`baselines`]: natural cubic spline interpolation and soft-impute
//!   matrix completion.
//! - [`metrics`]: masked training loss, RMSE on removed entries, the relative
//!   improvement percentage and k-fold plans.
//!
//! File formats, the evaluation harness and the command-line tool live in the
//! companion `gapfill` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod baselines;
pub mod data;
mod error;
pub mod masking;
pub mod metrics;
pub mod mrnn;
pub mod nncore;
pub mod seed;

pub use error::{Error, Result};
