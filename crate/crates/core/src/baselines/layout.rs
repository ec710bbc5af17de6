use alloc::format;
use alloc::vec::Vec;

use crate::data::Cohort;
use crate::nncore::Matrix;
use crate::{Error, Result};

/// Lays a cohort out as an `N x (D * L)` matrix: row `n`, column `d * L + t`.
///
/// Missing entries hold 0; the returned mask (row-major, same shape) marks
/// observed entries.
pub fn cohort_to_matrix(cohort: &Cohort) -> (Matrix, Vec<bool>) {
    let (n, d, l) = (cohort.n_segments(), cohort.n_streams(), cohort.len());
    let mut m = Matrix::zeros(n, d * l);
    let mut mask = Vec::with_capacity(n * d * l);
    for (i, s) in cohort.segments.iter().enumerate() {
        for (j, (vals, obs)) in s.values.iter().zip(&s.observed).enumerate() {
            for t in 0..l {
                if obs[t] {
                    m[(i, j * l + t)] = vals[t];
                }
            }
        }
        mask.extend(s.observed.iter().flatten().copied());
    }
    (m, mask)
}

/// Writes matrix values back into a copy of `template` (inverse of
/// [`cohort_to_matrix`]). Entries flagged in `mask` become observed.
pub fn matrix_to_cohort(matrix: &Matrix, mask: &[bool], template: &Cohort) -> Result<Cohort> {
    let (n, d, l) = (template.n_segments(), template.n_streams(), template.len());
    if matrix.rows() != n || matrix.cols() != d * l || mask.len() != n * d * l {
        return Err(Error::Shape(format!(
            "{}x{} matrix does not fit a cohort of {n} segments, {d} streams, length {l}",
            matrix.rows(),
            matrix.cols()
        )));
    }
    let mut out = template.clone();
    for (i, s) in out.segments.iter_mut().enumerate() {
        for j in 0..d {
            for t in 0..l {
                let c = j * l + t;
                let o = mask[i * d * l + c];
                s.observed[j][t] = o;
                s.values[j][t] = if o { matrix[(i, c)] } else { 0.0 };
            }
        }
    }
    Ok(out)
}
