use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{sigmoid, Matrix};
use crate::{Error, Result};

/// Weights of one GRU cell.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            w_r: Matrix::zeros(hidden, input),
            u_r: Matrix::zeros(hidden, hidden),
            b_r: vec![0.0; hidden],
            w_h: Matrix::zeros(hidden, input),
            u_h: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.b_z.len()
    }

    /// Checks that all nine blocks agree on `(input, hidden)`.
    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_size(), self.hidden_size());
        let ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|w| w.rows() == h && w.cols() == i)
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|u| u.rows() == h && u.cols() == h)
            && self.b_r.len() == h
            && self.b_h.len() == h;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("inconsistent GRU parameter blocks".into()))
        }
    }

    /// Parameter blocks in a fixed order, for packing.
    pub fn blocks(&self) -> [&[f64]; 9] {
        [
            self.w_z.as_slice(),
            self.u_z.as_slice(),
            &self.b_z,
            self.w_r.as_slice(),
            self.u_r.as_slice(),
            &self.b_r,
            self.w_h.as_slice(),
            self.u_h.as_slice(),
            &self.b_h,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_z.as_mut_slice(),
            self.u_z.as_mut_slice(),
            &mut self.b_z,
            self.w_r.as_mut_slice(),
            self.u_r.as_mut_slice(),
            &mut self.b_r,
            self.w_h.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_h,
        ]
    }

    /// One forward step, keeping what the backward pass needs.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> GruStep {
        let hidden = self.hidden_size();
        let (mut z, mut r, mut cand, mut h) = (vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]);
        let mut rh = vec![0.0; hidden];
        self.step_raw(x, h_prev, &mut z, &mut r, &mut cand, &mut h, &mut rh);
        GruStep { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, rh, cand, h }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_raw(&self, x: &[f64], h_prev: &[f64], z: &mut [f64], r: &mut [f64], cand: &mut [f64], h: &mut [f64], rh: &mut [f64]) {
        z.copy_from_slice(&self.b_z);
        self.w_z.matvec_acc(x, z);
        self.u_z.matvec_acc(h_prev, z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        r.copy_from_slice(&self.b_r);
        self.w_r.matvec_acc(x, r);
        self.u_r.matvec_acc(h_prev, r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        rh.iter_mut().zip(r.iter().zip(h_prev)).for_each(|(o, (a, b))| *o = a * b);
        cand.copy_from_slice(&self.b_h);
        self.w_h.matvec_acc(x, cand);
        self.u_h.matvec_acc(rh, cand);
        cand.iter_mut().for_each(|v| *v = libm::tanh(*v));

        for k in 0..h.len() {
            h[k] = (1.0 - z[k]) * h_prev[k] + z[k] * cand[k];
        }
    }

    /// Backpropagates `dh` (total gradient on this step's output) through one
    /// step. Weight gradients accumulate into `grads`; input and previous-state
    /// gradients accumulate into `dx` and `dh_prev`.
    pub fn step_backward(&self, step: &GruStep, dh: &[f64], grads: &mut GruParams, dx: &mut [f64], dh_prev: &mut [f64]) {
        let mut scratch = vec![0.0; 5 * self.hidden_size()];
        let rec = StepRef { x: &step.x, h_prev: &step.h_prev, z: &step.z, r: &step.r, cand: &step.cand };
        self.step_backward_raw(&rec, dh, grads, dx, dh_prev, &mut scratch);
    }

    fn step_backward_raw(&self, s: &StepRef<'_>, dh: &[f64], grads: &mut GruParams, dx: &mut [f64], dh_prev: &mut [f64], scratch: &mut [f64]) {
        let hidden = self.hidden_size();
        let (da_z, rest) = scratch.split_at_mut(hidden);
        let (da_h, rest) = rest.split_at_mut(hidden);
        let (da_r, rest) = rest.split_at_mut(hidden);
        let (d_rh, rest) = rest.split_at_mut(hidden);
        let rh = &mut rest[..hidden];
        for k in 0..hidden {
            let (z, c, hp) = (s.z[k], s.cand[k], s.h_prev[k]);
            dh_prev[k] += dh[k] * (1.0 - z);
            da_z[k] = dh[k] * (c - hp) * z * (1.0 - z);
            da_h[k] = dh[k] * z * (1.0 - c * c);
            rh[k] = s.r[k] * hp;
        }

        grads.w_h.add_outer(da_h, s.x);
        grads.u_h.add_outer(da_h, rh);
        add_assign(&mut grads.b_h, da_h);
        self.w_h.t_matvec_acc(da_h, dx);
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        self.u_h.t_matvec_acc(da_h, d_rh);

        for k in 0..hidden {
            let r = s.r[k];
            dh_prev[k] += d_rh[k] * r;
            da_r[k] = d_rh[k] * s.h_prev[k] * r * (1.0 - r);
        }

        grads.w_z.add_outer(da_z, s.x);
        grads.u_z.add_outer(da_z, s.h_prev);
        add_assign(&mut grads.b_z, da_z);
        self.w_z.t_matvec_acc(da_z, dx);
        self.u_z.t_matvec_acc(da_z, dh_prev);

        grads.w_r.add_outer(da_r, s.x);
        grads.u_r.add_outer(da_r, s.h_prev);
        add_assign(&mut grads.b_r, da_r);
        self.w_r.t_matvec_acc(da_r, dx);
        self.u_r.t_matvec_acc(da_r, dh_prev);
    }
}

struct StepRef<'a> {
    x: &'a [f64],
    h_prev: &'a [f64],
    z: &'a [f64],
    r: &'a [f64],
    cand: &'a [f64],
}

fn add_assign(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Single GRU step without recording.
pub fn gru_cell(params: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    if x.len() != params.input_size() || h_prev.len() != params.hidden_size() {
        return Err(Error::Shape(format!(
            "GRU cell ({} -> {}) fed input {} and state {}",
            params.input_size(),
            params.hidden_size(),
            x.len(),
            h_prev.len()
        )));
    }
    Ok(params.step(x, h_prev).h)
}

/// Intermediates of one GRU step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub rh: Vec<f64>,
    pub cand: Vec<f64>,
    pub h: Vec<f64>,
}

/// A GRU unrolled over a sequence from a zero initial state.
///
/// Intermediates are kept in flat row-major buffers, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruSequence {
    input: usize,
    hidden: usize,
    xs: Vec<f64>,
    /// `len + 1` rows; row 0 is the initial state.
    hs: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

impl GruSequence {
    pub fn run<'a>(params: &GruParams, inputs: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut xs = Vec::new();
        inputs.into_iter().for_each(|x| xs.extend_from_slice(x));
        Self::run_flat(params, xs)
    }

    /// Runs over `xs`, a row-major `len x input` buffer.
    pub fn run_flat(params: &GruParams, xs: Vec<f64>) -> Self {
        let (input, hidden) = (params.input_size(), params.hidden_size());
        let len = if input == 0 { 0 } else { xs.len() / input };
        let mut seq = Self {
            input,
            hidden,
            xs,
            hs: vec![0.0; (len + 1) * hidden],
            z: vec![0.0; len * hidden],
            r: vec![0.0; len * hidden],
            cand: vec![0.0; len * hidden],
        };
        let mut rh = vec![0.0; hidden];
        for i in 0..len {
            let (prev, next) = seq.hs.split_at_mut((i + 1) * hidden);
            let rows = i * hidden..(i + 1) * hidden;
            params.step_raw(
                &seq.xs[i * input..(i + 1) * input],
                &prev[i * hidden..],
                &mut seq.z[rows.clone()],
                &mut seq.r[rows.clone()],
                &mut seq.cand[rows],
                &mut next[..hidden],
                &mut rh,
            );
        }
        seq
    }

    pub fn len(&self) -> usize {
        self.z.len() / self.hidden.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// State after step `i`.
    pub fn output(&self, i: usize) -> &[f64] {
        &self.hs[(i + 1) * self.hidden..(i + 2) * self.hidden]
    }

    pub fn outputs(&self) -> impl Iterator<Item = &[f64]> {
        self.outputs_flat().chunks_exact(self.hidden.max(1))
    }

    /// All step outputs as one row-major `len x hidden` buffer.
    pub fn outputs_flat(&self) -> &[f64] {
        &self.hs[self.hidden..]
    }

    /// Backpropagation through time.
    ///
    /// `dh_out[i]` is the loss gradient arriving at the output of step `i`
    /// from outside the recurrence. Returns the per-step input gradients;
    /// weight gradients accumulate into `grads`.
    pub fn backward(&self, params: &GruParams, dh_out: &[Vec<f64>], grads: &mut GruParams) -> Result<Vec<Vec<f64>>> {
        if dh_out.len() != self.len() || dh_out.iter().any(|g| g.len() != self.hidden) {
            return Err(Error::Shape(format!(
                "{} output gradients for {} recorded steps",
                dh_out.len(),
                self.len()
            )));
        }
        let flat: Vec<f64> = dh_out.iter().flatten().copied().collect();
        let dx = self.backward_flat(params, &flat, grads)?;
        Ok(dx.chunks_exact(self.input.max(1)).map(<[f64]>::to_vec).collect())
    }

    /// [`GruSequence::backward`] over flat row-major gradient buffers.
    pub fn backward_flat(&self, params: &GruParams, dh_out: &[f64], grads: &mut GruParams) -> Result<Vec<f64>> {
        let (input, hidden, len) = (self.input, self.hidden, self.len());
        if params.input_size() != input || params.hidden_size() != hidden {
            return Err(Error::Shape("recorded sequence does not match the GRU parameters".into()));
        }
        if dh_out.len() != len * hidden {
            return Err(Error::Shape(format!(
                "{} output gradient values for {len} recorded steps of width {hidden}",
                dh_out.len()
            )));
        }
        let mut dx = vec![0.0; len * input];
        let mut carry = vec![0.0; hidden];
        let mut dh = vec![0.0; hidden];
        let mut scratch = vec![0.0; 5 * hidden];
        for i in (0..len).rev() {
            let rows = i * hidden..(i + 1) * hidden;
            for k in 0..hidden {
                dh[k] = dh_out[i * hidden + k] + carry[k];
                carry[k] = 0.0;
            }
            let rec = StepRef {
                x: &self.xs[i * input..(i + 1) * input],
                h_prev: &self.hs[i * hidden..(i + 1) * hidden],
                z: &self.z[rows.clone()],
                r: &self.r[rows.clone()],
                cand: &self.cand[rows],
            };
            params.step_backward_raw(&rec, &dh, grads, &mut dx[i * input..(i + 1) * input], &mut carry, &mut scratch);
        }
        Ok(dx)
    }
}
