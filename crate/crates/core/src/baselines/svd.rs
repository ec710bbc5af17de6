use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::nncore::Matrix;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
const ORTHOGONALITY_TOL: f64 = 1e-15;

/// Thin singular value decomposition `A = U diag(s) V^T`, with `s`
/// descending and `k = min(rows, cols)` components.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for (k, &s) in self.s.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let a = s * self.u[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * self.v[(j, k)];
                }
            }
        }
        out
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd> {
    Ok(JacobiSvd::new().decompose(a)?.0)
}

/// Jacobi SVD that can warm-start from the right rotation of a previous,
/// nearby matrix; soft-impute decomposes a slowly changing matrix hundreds
/// of times and a warm start needs one or two sweeps.
#[derive(Debug, Clone, Default)]
pub(crate) struct JacobiSvd {
    /// Accumulated right rotation (column-major, `n x n`) in the working
    /// orientation, with the shape it belongs to.
    rotation: Option<(usize, usize, Vec<f64>)>,
}

impl JacobiSvd {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    /// Returns the decomposition and the number of sweeps used.
    pub(crate) fn decompose(&mut self, a: &Matrix) -> Result<(Svd, usize)> {
        let transposed = a.rows() < a.cols();
        let work = if transposed { a.transpose() } else { a.clone() };
        let (m, n) = (work.rows(), work.cols());

        // column-major copy of the working matrix
        let mut cols = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                cols[j * m + i] = work[(i, j)];
            }
        }
        let mut rot = match self.rotation.take() {
            Some((rm, rn, r)) if rm == m && rn == n => {
                cols = apply_rotation(&cols, &r, m, n);
                r
            }
            _ => identity_cm(n),
        };

        let mut sweeps = 0;
        loop {
            if sweeps == MAX_SWEEPS {
                return Err(Error::Numerical(format!("Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")));
            }
            sweeps += 1;
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let (left, right) = cols.split_at_mut(q * m);
                    let cp = &mut left[p * m..(p + 1) * m];
                    let cq = &mut right[..m];
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for (x, y) in cp.iter().zip(cq.iter()) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    if gamma == 0.0 || gamma.abs() <= ORTHOGONALITY_TOL * libm::sqrt(alpha * beta) {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                    let c = 1.0 / libm::sqrt(1.0 + t * t);
                    let s = c * t;
                    rotate(cp, cq, c, s);
                    let (left, right) = rot.split_at_mut(q * n);
                    rotate(&mut left[p * n..(p + 1) * n], &mut right[..n], c, s);
                }
            }
            if !rotated {
                break;
            }
        }

        let mut order: Vec<(f64, usize)> = (0..n)
            .map(|j| (libm::sqrt(cols[j * m..(j + 1) * m].iter().map(|x| x * x).sum()), j))
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut u = Matrix::zeros(m, n);
        let mut v = Matrix::zeros(n, n);
        let mut s = Vec::with_capacity(n);
        for (k, &(sigma, j)) in order.iter().enumerate() {
            s.push(sigma);
            if sigma > 0.0 {
                for i in 0..m {
                    u[(i, k)] = cols[j * m + i] / sigma;
                }
            }
            for i in 0..n {
                v[(i, k)] = rot[j * n + i];
            }
        }
        self.rotation = Some((m, n, rot));
        let svd = if transposed { Svd { u: v, s, v: u } } else { Svd { u, s, v } };
        Ok((svd, sweeps))
    }
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

fn identity_cm(n: usize) -> Vec<f64> {
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        r[i * n + i] = 1.0;
    }
    r
}

/// `A * R` for column-major `A` (`m x n`) and `R` (`n x n`).
fn apply_rotation(a: &[f64], r: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for j in 0..n {
        let dst = &mut out[j * m..(j + 1) * m];
        for k in 0..n {
            let w = r[j * n + k];
            if w == 0.0 {
                continue;
            }
            for (d, x) in dst.iter_mut().zip(&a[k * m..(k + 1) * m]) {
                *d += w * x;
            }
        }
    }
    out
}
