//! A small differentiable substrate: dense layers, GRU cells with
//! backpropagation through time, Adam and a finite-difference checker.
//!
//! Everything is `f64`. Gradients are written by hand per layer; there is no
//! general autodiff graph.

mod adam;
mod dense;
mod gradcheck;
mod gru;
mod matrix;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{dense_forward, Activation, DenseGrads, DenseRecord};
pub use gradcheck::grad_check;
pub use gru::{gru_cell, GruParams, GruSequence, GruStep};
pub use matrix::Matrix;
pub use params::{init_params, BlockInit, BlockPlan, ParamBlock, ParamStore};

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
