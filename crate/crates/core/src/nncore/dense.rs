use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{sigmoid, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

fn check_dims(w: &Matrix, b: &[f64], x: &[f64]) -> Result<()> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::Shape(format!(
            "dense layer {}x{} with bias {} applied to input {}",
            w.rows(),
            w.cols(),
            b.len(),
            x.len()
        )));
    }
    Ok(())
}

/// `activation(W x + b)`.
pub fn dense_forward(w: &Matrix, b: &[f64], x: &[f64], activation: Activation) -> Result<Vec<f64>> {
    Ok(DenseRecord::forward(w, b, x, activation)?.output)
}

/// Forward intermediates of one dense application.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseRecord {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub input: Vec<f64>,
}

impl DenseRecord {
    pub fn forward(w: &Matrix, b: &[f64], x: &[f64], activation: Activation) -> Result<Self> {
        check_dims(w, b, x)?;
        let mut output = b.to_vec();
        w.matvec_acc(x, &mut output);
        output.iter_mut().for_each(|v| *v = activation.apply(*v));
        Ok(Self { input: x.to_vec(), output, activation })
    }

    /// Gradients of a scalar loss given `dL/d output`.
    pub fn backward(&self, w: &Matrix, upstream: &[f64]) -> Result<DenseGrads> {
        if upstream.len() != self.output.len() || w.rows() != self.output.len() || w.cols() != self.input.len() {
            return Err(Error::Shape("dense record does not match the weights or gradient".into()));
        }
        let pre: Vec<f64> = upstream
            .iter()
            .zip(&self.output)
            .map(|(g, &y)| g * self.activation.derivative_from_output(y))
            .collect();
        let mut gw = Matrix::zeros(w.rows(), w.cols());
        gw.add_outer(&pre, &self.input);
        let mut gx = vec![0.0; self.input.len()];
        w.t_matvec_acc(&pre, &mut gx);
        Ok(DenseGrads { w: gw, b: pre, input: gx })
    }
}
