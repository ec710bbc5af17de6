//! Scoring: masked training loss, RMSE over removed entries, relative
//! improvement, and k-fold segment plans.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Cohort;
use crate::masking::GroundTruthLedger;
use crate::{Error, Result};

/// Sum over segments of the squared error averaged over each segment's
/// observed entries. Grids are indexed `[segment][stream][time]`; segments
/// with no observed entry are skipped.
pub fn training_loss(xhat: &[Vec<Vec<f64>>], x: &[Vec<Vec<f64>>], m: &[Vec<Vec<f64>>]) -> Result<f64> {
    if xhat.len() != x.len() || x.len() != m.len() {
        return Err(Error::Shape("estimate, value and mask grids hold different segment counts".into()));
    }
    let mut total = 0.0;
    for (n, ((eh, ex), em)) in xhat.iter().zip(x).zip(m).enumerate() {
        let conforms = eh.len() == ex.len()
            && ex.len() == em.len()
            && eh.iter().zip(ex).zip(em).all(|((a, b), c)| a.len() == b.len() && b.len() == c.len());
        if !conforms {
            return Err(Error::Shape(format!("segment {n}: grids do not conform")));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for ((rh, rx), rm) in eh.iter().zip(ex).zip(em) {
            for ((h, v), w) in rh.iter().zip(rx).zip(rm) {
                num += w * (h - v) * (h - v);
                den += w;
            }
        }
        if den > 0.0 {
            total += num / den;
        }
    }
    Ok(total)
}

/// Root mean squared error of the fills at the ledger's coordinates.
pub fn rmse(completed: &Cohort, ledger: &GroundTruthLedger) -> Result<f64> {
    if ledger.is_empty() {
        return Err(Error::Precondition("RMSE needs a nonempty ledger".into()));
    }
    let mut se = 0.0;
    for e in ledger.entries() {
        let series = completed
            .segments
            .get(e.segment)
            .filter(|s| e.stream < s.n_streams() && e.time < s.len())
            .ok_or_else(|| Error::Shape(format!("ledger coordinate ({}, {}, {}) outside the cohort", e.segment, e.stream, e.time)))?;
        if !series.observed[e.stream][e.time] {
            return Err(Error::Precondition(format!(
                "coordinate ({}, {}, {}) was not filled",
                e.segment, e.stream, e.time
            )));
        }
        let r = series.values[e.stream][e.time] - e.value;
        se += r * r;
    }
    Ok(libm::sqrt(se / ledger.len() as f64))
}

/// Relative improvement of the M-RNN over another method, in percent:
/// `|rmse_mrnn - rmse_other| / rmse_mrnn * 100`.
pub fn eta(rmse_mrnn: f64, rmse_other: f64) -> Result<f64> {
    if !(rmse_mrnn > 0.0) {
        return Err(Error::UndefinedMetric(format!("reference RMSE {rmse_mrnn} must be positive")));
    }
    Ok((rmse_mrnn - rmse_other).abs() / rmse_mrnn * 100.0)
}

/// Seeded assignment of segments to `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    /// Shuffles `0..n` and deals the segments round-robin, so the first
    /// `n % k` folds get one extra segment.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || n < k {
            return Err(Error::Precondition(format!("cannot split {n} segments into {k} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignment = vec![0; n];
        for (pos, &seg) in order.iter().enumerate() {
            assignment[seg] = pos % k;
        }
        Ok(Self { k, assignment, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Segment indices of one fold, ascending.
    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == f).collect()
    }

    /// Segment indices outside one fold, ascending.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.assignment.iter().for_each(|&f| sizes[f] += 1);
        sizes
    }
}
