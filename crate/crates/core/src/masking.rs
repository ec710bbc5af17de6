//! Missingness mechanisms, the ground-truth ledger and model input triplets.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Cohort, NormParams, SegmentSeries};
use crate::{Error, Result};

/// How entries are selected for removal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskMode {
    /// Every entry is removed independently with probability `tau`.
    Bernoulli { tau: f64 },
    /// Per (segment, stream), `round(L / 4)` distinct time indices are drawn
    /// from a discrete Gaussian over the grid.
    GaussianPattern { center: f64, sd: f64 },
}

/// Which role a mask plays in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskScope {
    /// Hides entries during training only.
    Train,
    /// Removes entries whose ground truth is scored.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub mode: MaskMode,
    pub seed: u64,
    pub scope: MaskScope,
}

impl MaskSpec {
    pub fn bernoulli(tau: f64, seed: u64) -> Result<Self> {
        let spec = Self { mode: MaskMode::Bernoulli { tau }, seed, scope: MaskScope::Eval };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(center: f64, sd: f64, seed: u64) -> Result<Self> {
        let spec = Self { mode: MaskMode::GaussianPattern { center, sd }, seed, scope: MaskScope::Eval };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            MaskMode::Bernoulli { tau } if !(0.0..=1.0).contains(&tau) => {
                Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")))
            }
            MaskMode::GaussianPattern { center, sd } if !(sd > 0.0 && sd.is_finite() && center.is_finite()) => {
                Err(Error::InvalidArgument(format!("gaussian pattern needs finite center and sd > 0, got ({center}, {sd})")))
            }
            _ => Ok(()),
        }
    }

    /// Same mechanism under another seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// A removed value and where it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub segment: usize,
    pub stream: usize,
    pub time: usize,
    pub value: f64,
}

/// True values of every artificially removed entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthLedger {
    entries: Vec<LedgerEntry>,
}

impl GroundTruthLedger {
    pub fn new(entries: Vec<LedgerEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert((e.segment, e.stream, e.time)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate ledger coordinate ({}, {}, {})",
                    e.segment, e.stream, e.time
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that every coordinate is missing in `masked`.
    pub fn check_against(&self, masked: &Cohort) -> Result<()> {
        for e in &self.entries {
            let observed = masked
                .segments
                .get(e.segment)
                .and_then(|s| s.observed.get(e.stream))
                .and_then(|o| o.get(e.time))
                .ok_or_else(|| Error::Shape(format!("ledger coordinate ({}, {}, {}) outside the cohort", e.segment, e.stream, e.time)))?;
            if *observed {
                return Err(Error::Precondition(format!(
                    "ledger coordinate ({}, {}, {}) is observed in the cohort",
                    e.segment, e.stream, e.time
                )));
            }
        }
        Ok(())
    }

    /// Maps true values through per-stream normalization.
    pub fn normalized(&self, params: &[NormParams]) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let p = params
                    .get(e.stream)
                    .ok_or_else(|| Error::Shape(format!("no normalization for stream {}", e.stream)))?;
                Ok(LedgerEntry { value: p.apply(e.value), ..*e })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    /// Entries of the listed segments, re-indexed to their position in
    /// `segments` (matching [`Cohort::subset`]).
    pub fn restricted_to(&self, segments: &[usize]) -> Self {
        let entries = self
            .entries
            .iter()
            .filter_map(|e| {
                segments
                    .iter()
                    .position(|&s| s == e.segment)
                    .map(|pos| LedgerEntry { segment: pos, ..*e })
            })
            .collect();
        Self { entries }
    }

    /// Keeps entries with `time < len`, matching [`Cohort::truncated`].
    pub fn truncated(&self, len: usize) -> Self {
        Self { entries: self.entries.iter().filter(|e| e.time < len).copied().collect() }
    }
}

/// Removes entries from a fully observed cohort.
///
/// Removed values are recorded in the ledger and overwritten with `0.0`.
pub fn apply_mask(cohort: &Cohort, spec: &MaskSpec) -> Result<(Cohort, GroundTruthLedger)> {
    spec.validate()?;
    if !cohort.is_complete() {
        return Err(Error::Precondition("masking needs a fully observed cohort".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let len = cohort.len();
    let mut masked = cohort.clone();
    let mut entries = Vec::new();

    for (n, series) in masked.segments.iter_mut().enumerate() {
        for d in 0..series.n_streams() {
            let remove: Vec<usize> = match spec.mode {
                MaskMode::Bernoulli { tau } => (0..len).filter(|_| rng.random::<f64>() < tau).collect(),
                MaskMode::GaussianPattern { center, sd } => {
                    let mut idx = gaussian_indices(&mut rng, len, center, sd);
                    idx.sort_unstable();
                    idx
                }
            };
            for t in remove {
                entries.push(LedgerEntry { segment: n, stream: d, time: t, value: series.values[d][t] });
                series.values[d][t] = 0.0;
                series.observed[d][t] = false;
            }
        }
    }
    Ok((masked, GroundTruthLedger { entries }))
}

/// Draws `round(len / 4)` distinct indices from a discrete Gaussian over
/// `0..len`. Duplicates are resampled, which is the same as drawing from the
/// Gaussian renormalized over the indices not yet taken.
fn gaussian_indices(rng: &mut ChaCha8Rng, len: usize, center: f64, sd: f64) -> Vec<usize> {
    let count = libm::round(len as f64 / 4.0) as usize;
    let mut weights: Vec<f64> = (0..len)
        .map(|i| {
            let z = (i as f64 - center) / sd;
            libm::exp(-0.5 * z * z)
        })
        .collect();
    let mut taken = vec![false; len];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick
        } else {
            None
        };
        // all remaining weight underflowed: nearest free index to the center
        let i = pick.unwrap_or_else(|| {
            (0..len)
                .filter(|&i| !taken[i])
                .min_by(|&a, &b| (a as f64 - center).abs().total_cmp(&(b as f64 - center).abs()))
                .expect("count <= len")
        });
        taken[i] = true;
        weights[i] = 0.0;
        out.push(i);
    }
    out
}

/// Model input arrays of one segment: values with zeros at missing entries,
/// the 0/1 observation mask, and minutes since the last observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTriplet {
    pub z: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
}

impl MaskedTriplet {
    pub fn n_streams(&self) -> usize {
        self.z.len()
    }

    pub fn len(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observed_count(&self) -> f64 {
        self.m.iter().flatten().sum()
    }
}

/// Builds `(z, m, delta)` for a series.
///
/// `delta[d][0] = 0`; afterwards the gap to the previous timestamp is added
/// to the running delta while the previous entry was missing, and restarts
/// from the gap after an observation.
pub fn build_triplet(series: &SegmentSeries) -> MaskedTriplet {
    let ts = &series.timestamps;
    let mut z = Vec::with_capacity(series.n_streams());
    let mut m = Vec::with_capacity(series.n_streams());
    let mut delta = Vec::with_capacity(series.n_streams());
    for (vals, obs) in series.values.iter().zip(&series.observed) {
        z.push(vals.iter().zip(obs).map(|(&v, &o)| if o { v } else { 0.0 }).collect());
        m.push(obs.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect());
        let mut row = vec![0.0; ts.len()];
        for t in 1..ts.len() {
            let gap = (ts[t] - ts[t - 1]) as f64;
            row[t] = if obs[t - 1] { gap } else { gap + row[t - 1] };
        }
        delta.push(row);
    }
    MaskedTriplet { z, m, delta }
}
