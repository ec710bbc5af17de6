//! K-fold comparison of the M-RNN against the baselines, and sweeps of that
//! comparison over the missing threshold, sequence length or cohort size.
//!
//! All randomness is derived from one root seed: the eval mask, the fold
//! plan, the soft-impute holdout and each fold's training run get their own
//! stream, and sweep points derive theirs from (axis, value). Folds and grid
//! points run on a worker pool; rows are merged in canonical order, so the
//! report does not depend on scheduling.

use std::time::Instant;

use gapfill_core::baselines::{cohort_to_matrix, matrix_to_cohort, soft_impute, spline_impute, SoftImputeConfig};
use gapfill_core::data::{fit_norm_params, normalize_with, Cohort};
use gapfill_core::masking::{apply_mask, GroundTruthLedger, MaskMode, MaskScope, MaskSpec};
use gapfill_core::metrics::{rmse, FoldPlan};
use gapfill_core::mrnn::{impute, train, TrainConfig};
use gapfill_core::seed::{derive, label};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::report::{Axis, ComparisonReport, Method, ReportRow};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// Mechanism removing the scored entries.
    pub mask: MaskMode,
    pub methods: Vec<Method>,
    /// M-RNN settings; the seed is replaced by a per-fold derived one.
    pub train: TrainConfig,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    /// Record wall-clock runtimes. Off by default so reports are
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            mask: MaskMode::Bernoulli { tau: 0.2 },
            methods: Method::ALL.to_vec(),
            train: TrainConfig::default(),
            seed: 0,
            workers: 0,
            timing: false,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds", format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "no methods selected"));
        }
        MaskSpec { mode: self.mask, seed: 0, scope: MaskScope::Eval }
            .validate()
            .map_err(|e| Error::config("tau", e.to_string()))?;
        self.train.validate().map_err(|e| Error::config("lr", e.to_string()))?;
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))
    }
}

/// Eval-masked, normalized cohort with its normalized ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub masked: Cohort,
    pub ledger: GroundTruthLedger,
}

/// Applies the eval mask and normalizes with parameters fitted on the
/// entries that survive it.
pub fn prepare(cohort: &Cohort, mask: MaskMode, seed: u64) -> Result<Prepared> {
    let spec = MaskSpec { mode: mask, seed: derive(seed, &[label("mask")]), scope: MaskScope::Eval };
    let (masked, ledger) = apply_mask(cohort, &spec)?;
    let params = fit_norm_params(&masked)?;
    Ok(Prepared { masked: normalize_with(&masked, &params)?, ledger: ledger.normalized(&params)? })
}

fn timed<T>(on: bool, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, if on { start.elapsed().as_secs_f64() } else { 0.0 }))
}

/// Cross-validates every configured method on a complete cohort.
pub fn cross_validate(cohort: &Cohort, config: &CvConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let pool = config.pool()?;
    let rows = pool.install(|| cv_rows(cohort, config, Axis::None, None, config.seed))?;
    ComparisonReport::new(rows)
}

fn cv_rows(cohort: &Cohort, config: &CvConfig, axis: Axis, axis_value: Option<f64>, seed: u64) -> Result<Vec<ReportRow>> {
    let n = cohort.n_segments();
    if n < config.folds {
        return Err(gapfill_core::Error::Precondition(format!("{n} segments cannot fill {} folds", config.folds)).into());
    }
    let prepared = prepare(cohort, config.mask, seed)?;
    let plan = FoldPlan::new(n, config.folds, derive(seed, &[label("folds")]))?;

    let completed_by_soft_impute = if config.methods.contains(&Method::SoftImpute) {
        Some(timed(config.timing, || {
            let (matrix, mask) = cohort_to_matrix(&prepared.masked);
            let si = SoftImputeConfig { seed: derive(seed, &[label("soft_impute")]), ..SoftImputeConfig::for_matrix(&matrix, &mask)? };
            let out = soft_impute(&matrix, &mask, &si)?;
            Ok(matrix_to_cohort(&out.completed, &vec![true; mask.len()], &prepared.masked)?)
        })?)
    } else {
        None
    };

    let tau = match config.mask {
        MaskMode::Bernoulli { tau } => Some(tau),
        MaskMode::GaussianPattern { .. } => None,
    };
    let row = |method, fold, rmse, runtime_s| ReportRow {
        method,
        axis,
        axis_value,
        fold,
        n_segments: n,
        seq_length: cohort.len(),
        tau,
        rmse,
        runtime_s,
    };

    let per_fold: Vec<Vec<ReportRow>> = (0..config.folds)
        .into_par_iter()
        .map(|fold| {
            let held = plan.fold(fold);
            let ledger = prepared.ledger.restricted_to(&held);
            let test = prepared.masked.subset(&held)?;
            let mut rows = Vec::new();
            for &method in &config.methods {
                let (score, secs) = timed(config.timing, || match method {
                    Method::Mrnn => {
                        let tc = TrainConfig { seed: derive(seed, &[label("train"), fold as u64]), ..config.train };
                        let outcome = train(&prepared.masked.subset(&plan.complement(fold))?, &tc)?;
                        Ok(rmse(&impute(&outcome.model, &test)?, &ledger)?)
                    }
                    Method::Spline => {
                        let mut filled = test.clone();
                        filled.segments.iter_mut().for_each(|s| *s = spline_impute(s));
                        Ok(rmse(&filled, &ledger)?)
                    }
                    Method::SoftImpute => {
                        let (full, _) = completed_by_soft_impute.as_ref().expect("computed when selected");
                        Ok(rmse(&full.subset(&held)?, &ledger)?)
                    }
                })?;
                let secs = match (method, &completed_by_soft_impute) {
                    (Method::SoftImpute, Some((_, shared))) => secs + shared,
                    _ => secs,
                };
                rows.push(row(method, fold, score, secs));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_fold.into_iter().flatten().collect())
}

/// Checks a sweep grid against the source cohort; errors name the value.
pub fn validate_grid(source: &Cohort, axis: Axis, grid: &[f64], folds: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("grid", "empty grid"));
    }
    for &v in grid {
        let bad = |why: String| Err(Error::config("grid", format!("value {v}: {why}")));
        match axis {
            Axis::Tau if !(0.0..=1.0).contains(&v) => return bad("tau must lie in [0, 1]".into()),
            Axis::Length | Axis::Segments if v.fract() != 0.0 || v < 1.0 => {
                return bad("must be a positive integer".into())
            }
            Axis::Length if v as usize > source.len() => {
                return bad(format!("longer than the cohort grid ({})", source.len()))
            }
            Axis::Segments if (v as usize) < folds || v as usize > source.n_segments() => {
                return bad(format!("must lie in [{folds}, {}]", source.n_segments()))
            }
            Axis::None => return bad("sweeps need an axis".into()),
            _ => {}
        }
    }
    Ok(())
}

/// Seeded choice of `count` segments, kept in their original order.
pub fn subsample(cohort: &Cohort, count: usize, seed: u64) -> Result<Cohort> {
    let mut idx: Vec<usize> = (0..cohort.n_segments()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(count);
    idx.sort_unstable();
    Ok(cohort.subset(&idx)?)
}

/// Runs one cross-validation per grid value along `axis`.
pub fn sweep(source: &Cohort, axis: Axis, grid: &[f64], config: &CvConfig) -> Result<ComparisonReport> {
    config.validate()?;
    validate_grid(source, axis, grid, config.folds)?;
    let pool = config.pool()?;
    let rows: Vec<Vec<ReportRow>> = pool.install(|| {
        grid.par_iter()
            .map(|&v| {
                let seed = derive(config.seed, &[label(axis.name()), v.to_bits()]);
                let mut point = config.clone();
                let cohort = match axis {
                    Axis::Tau => {
                        point.mask = MaskMode::Bernoulli { tau: v };
                        source.clone()
                    }
                    Axis::Length => source.truncated(v as usize)?,
                    Axis::Segments => subsample(source, v as usize, derive(seed, &[label("subsample")]))?,
                    Axis::None => unreachable!("rejected by validate_grid"),
                };
                cv_rows(&cohort, &point, axis, Some(v), seed)
            })
            .collect::<Result<_>>()
    })?;
    ComparisonReport::new(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gapfill_core::data::{synthesize_cohort, SynthSpec};

    fn quick() -> CvConfig {
        CvConfig { train: TrainConfig { epochs: 3, ..TrainConfig::default() }, workers: 2, seed: 5, ..CvConfig::default() }
    }

    #[test]
    fn leave_one_out_runs() {
        let c = synthesize_cohort(&SynthSpec::new(5, 12, 0.05, 1)).unwrap();
        let cfg = CvConfig { mask: MaskMode::Bernoulli { tau: 0.4 }, ..quick() };
        let r = cross_validate(&c, &cfg).unwrap();
        assert_eq!(r.rows().len(), 15);
        assert!(r.rows().iter().all(|row| row.rmse >= 0.0 && row.runtime_s == 0.0));
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let c = synthesize_cohort(&SynthSpec::new(12, 10, 0.05, 2)).unwrap();
        let a = cross_validate(&c, &quick()).unwrap();
        let b = cross_validate(&c, &CvConfig { workers: 1, ..quick() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_segments() {
        let c = synthesize_cohort(&SynthSpec::new(3, 10, 0.05, 2)).unwrap();
        assert!(matches!(cross_validate(&c, &quick()), Err(Error::Core(gapfill_core::Error::Precondition(_)))));
    }

    #[test]
    fn tau_sweep_cardinality() {
        let c = synthesize_cohort(&SynthSpec::new(10, 10, 0.05, 3)).unwrap();
        let r = sweep(&c, Axis::Tau, &[0.1, 0.2, 0.3, 0.4], &quick()).unwrap();
        assert_eq!(r.rows().len(), 4 * 3 * 5);
        assert_eq!(r.axis_values().len(), 4);
    }

    #[test]
    fn grid_errors_name_the_value() {
        let c = synthesize_cohort(&SynthSpec::new(10, 10, 0.05, 3)).unwrap();
        for (axis, v) in [(Axis::Tau, 1.5), (Axis::Length, 11.0), (Axis::Segments, 4.0), (Axis::Length, 2.5)] {
            match sweep(&c, axis, &[v], &quick()) {
                Err(Error::Config { message, .. }) => assert!(message.contains(&v.to_string()), "{message}"),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(sweep(&c, Axis::Tau, &[], &quick()).is_err());
    }

    #[test]
    fn subsample_keeps_order() {
        let c = synthesize_cohort(&SynthSpec::new(10, 4, 0.05, 3)).unwrap();
        let s = subsample(&c, 4, 9).unwrap();
        let ids: Vec<&str> = s.segments.iter().map(|s| s.segment.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted);
        assert_eq!(s, subsample(&c, 4, 9).unwrap());
    }
}
