use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::svd::JacobiSvd;
use crate::nncore::Matrix;
use crate::{Error, Result};

/// Soft-impute settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftImputeConfig {
    /// Strictly descending, positive regularization weights.
    pub lambdas: Vec<f64>,
    pub max_iter: usize,
    /// Stage stops once `||M_new - M||_F / ||M||_F` drops below this.
    pub tol: f64,
    /// Maximum rank kept by each thresholding step; `None` means no cap.
    pub rank_cap: Option<usize>,
    /// Share of observed entries held back to pick the weight.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl SoftImputeConfig {
    pub fn new(lambdas: Vec<f64>) -> Self {
        Self { lambdas, max_iter: 200, tol: 1e-5, rank_cap: None, holdout_fraction: 0.1, seed: 0 }
    }

    /// Default schedule derived from the largest singular value of the
    /// observed entries (missing ones at zero).
    pub fn for_matrix(matrix: &Matrix, mask: &[bool]) -> Result<Self> {
        let observed = observed_part(matrix, mask);
        let sigma_max = JacobiSvd::new().decompose(&observed)?.0.s.first().copied().unwrap_or(0.0);
        if sigma_max <= 0.0 {
            return Err(Error::Precondition("observed entries are all zero".into()));
        }
        Ok(Self::new(default_lambda_schedule(sigma_max)))
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return bad(format!("lambda schedule {:?} must be nonempty and positive", self.lambdas));
        }
        if self.lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("lambda schedule {:?} must be strictly descending", self.lambdas));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad(format!("tolerance {} and max_iter {} must be positive", self.tol, self.max_iter));
        }
        if let Some(cap) = self.rank_cap {
            if cap == 0 || cap > rows.min(cols) {
                return bad(format!("rank cap {cap} outside 1..={}", rows.min(cols)));
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout fraction {} outside [0, 1)", self.holdout_fraction));
        }
        Ok(())
    }
}

/// Ten log-spaced weights from `sigma_max / 2` down to `sigma_max / 1000`.
pub fn default_lambda_schedule(sigma_max: f64) -> Vec<f64> {
    let (hi, lo) = (libm::log(sigma_max / 2.0), libm::log(sigma_max / 1000.0));
    (0..10).map(|i| libm::exp(hi + (lo - hi) * i as f64 / 9.0)).collect()
}

/// Per-weight diagnostics of the final path.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `0.5 ||P_obs(X - M)||_F^2 + lambda ||M||_*` after each iteration.
    pub objective: Vec<f64>,
    /// RMS error on the held-back entries at the end of the stage, when a
    /// held-back set was used.
    pub holdout_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftImputeOutcome {
    /// Completion with observed entries restored exactly.
    pub completed: Matrix,
    /// Final thresholded iterate, before the observed entries are restored.
    pub low_rank: Matrix,
    pub selected_lambda: f64,
    pub stages: Vec<StageReport>,
}

fn observed_part(matrix: &Matrix, mask: &[bool]) -> Matrix {
    let mut out = matrix.clone();
    out.as_mut_slice().iter_mut().zip(mask).filter(|(_, &o)| !o).for_each(|(v, _)| *v = 0.0);
    out
}

/// Spectral-regularization matrix completion along a warm-started path of
/// decreasing weights.
///
/// Each iteration replaces `M` by the singular-value soft-thresholding of
/// `P_obs(X) + P_miss(M)`. The weight is picked by the error on a seeded
/// held-back share of the observed entries, then the path is rerun on all
/// observed entries down to that weight.
pub fn soft_impute(matrix: &Matrix, mask: &[bool], config: &SoftImputeConfig) -> Result<SoftImputeOutcome> {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    if mask.len() != rows * cols {
        return Err(Error::Shape(format!("mask of {} for a {rows}x{cols} matrix", mask.len())));
    }
    config.validate(rows, cols)?;
    let observed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if observed.is_empty() {
        return Err(Error::Precondition("soft-impute needs at least one observed entry".into()));
    }
    if observed.iter().any(|&i| !matrix.as_slice()[i].is_finite()) {
        return Err(Error::InvalidArgument("observed entries must be finite".into()));
    }

    let n_hold = libm::floor(config.holdout_fraction * observed.len() as f64) as usize;
    let (selected, holdout_rmse) = if config.lambdas.len() > 1 && n_hold > 0 && n_hold < observed.len() {
        let mut shuffled = observed.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        let held = &shuffled[..n_hold];
        let mut fit_mask = mask.to_vec();
        held.iter().for_each(|&i| fit_mask[i] = false);
        let mut errors = Vec::with_capacity(config.lambdas.len());
        run_path(matrix, &fit_mask, &config.lambdas, config, |_, m| {
            let se: f64 = held.iter().map(|&i| m.as_slice()[i] - matrix.as_slice()[i]).map(|r| r * r).sum();
            errors.push(libm::sqrt(se / held.len() as f64));
        })?;
        let best = errors
            .iter()
            .enumerate()
            .fold(0, |b, (i, &e)| if e < errors[b] { i } else { b });
        (best, Some(errors))
    } else {
        (config.lambdas.len() - 1, None)
    };

    let (m, mut stages) = run_path(matrix, mask, &config.lambdas[..=selected], config, |_, _| {})?;
    if let Some(errors) = holdout_rmse {
        for (s, e) in stages.iter_mut().zip(errors) {
            s.holdout_rmse = Some(e);
        }
    }
    let mut completed = m.clone();
    for &i in &observed {
        completed.as_mut_slice()[i] = matrix.as_slice()[i];
    }
    Ok(SoftImputeOutcome { completed, low_rank: m, selected_lambda: config.lambdas[selected], stages })
}

fn run_path(
    matrix: &Matrix,
    mask: &[bool],
    lambdas: &[f64],
    config: &SoftImputeConfig,
    mut after_stage: impl FnMut(usize, &Matrix),
) -> Result<(Matrix, Vec<StageReport>)> {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let cap = config.rank_cap.unwrap_or(usize::MAX);
    let x = matrix.as_slice();
    let mut jacobi = JacobiSvd::new();
    let mut m = Matrix::zeros(rows, cols);
    let mut stages = Vec::with_capacity(lambdas.len());

    for (stage, &lambda) in lambdas.iter().enumerate() {
        let mut report = StageReport { lambda, iterations: 0, converged: false, objective: Vec::new(), holdout_rmse: None };
        for _ in 0..config.max_iter {
            let mut y = m.clone();
            y.as_mut_slice().iter_mut().zip(mask).enumerate().filter(|(_, (_, &o))| o).for_each(|(i, (v, _))| *v = x[i]);
            let (d, _) = jacobi
                .decompose(&y)
                .map_err(|e| Error::Numerical(format!("SVD failed in lambda stage {stage} (lambda = {lambda}): {e}")))?;

            let mut next = Matrix::zeros(rows, cols);
            let mut nuclear = 0.0;
            for (k, &s) in d.s.iter().enumerate().take(cap) {
                let shrunk = s - lambda;
                if shrunk <= 0.0 {
                    break;
                }
                nuclear += shrunk;
                for i in 0..rows {
                    let a = shrunk * d.u[(i, k)];
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..cols {
                        next[(i, j)] += a * d.v[(j, k)];
                    }
                }
            }

            let resid: f64 = next.as_slice().iter().zip(x).zip(mask).filter(|(_, &o)| o).map(|((a, b), _)| (a - b) * (a - b)).sum();
            report.objective.push(0.5 * resid + lambda * nuclear);
            report.iterations += 1;

            let diff: f64 = next.as_slice().iter().zip(m.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
            let base: f64 = m.as_slice().iter().map(|v| v * v).sum();
            m = next;
            let change = if base > 0.0 {
                libm::sqrt(diff / base)
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            if change < config.tol {
                report.converged = true;
                break;
            }
        }
        after_stage(stage, &m);
        stages.push(report);
    }
    Ok((m, stages))
}
