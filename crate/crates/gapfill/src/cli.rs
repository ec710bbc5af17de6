//! The `gapfill` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gapfill_core::data::{denormalize, fit_norm_params, normalize_with, select_cohort, synthesize_cohort, Cohort, NormParams, SynthSpec};
use gapfill_core::masking::{apply_mask, MaskMode, MaskScope, MaskSpec};
use gapfill_core::mrnn::{default_delta_scale, impute, loss_and_gradient, total_loss, train, MrnnDims, MrnnModel, TrainConfig};
use gapfill_core::nncore::grad_check;
use gapfill_core::seed::{derive, label};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::csvio::{ingest_csv, read_cohort, read_ledger, write_cohort, write_ledger};
use crate::harness::{cross_validate, sweep, CvConfig};
use crate::report::{emit_eta, emit_plot, emit_report, Axis, ComparisonReport, Method, ReportRow};
use crate::{Error, Result};

/// Gap filling for multivariate road-traffic time series.
#[derive(Debug, Parser)]
#[command(name = "gapfill", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a complete synthetic congestion cohort.
    Synth(SynthArgs),
    /// Filter raw records by confidence and select a cohort.
    Ingest(IngestArgs),
    /// Remove entries from a complete cohort and record their true values.
    Mask(MaskArgs),
    /// Train an M-RNN on a (masked) cohort.
    Train(TrainArgs),
    /// Fill the missing entries of a cohort with a trained model.
    Impute(ImputeArgs),
    /// Score models and baselines against a ground-truth ledger.
    Eval(EvalArgs),
    /// Cross-validate all methods on one cohort.
    Cv(CvArgs),
    /// Cross-validate along a grid of tau, L or N values.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients of the M-RNN loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of road segments.
    #[arg(long, default_value_t = 382)]
    pub n: usize,
    /// Minutes per segment.
    #[arg(long, default_value_t = 85)]
    pub length: usize,
    /// Standard deviation of the multiplicative noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Lowest accepted record confidence, in percent.
    #[arg(long, default_value_t = 95.0)]
    pub min_confidence: f64,
    /// Minimum number of shared consecutive minutes.
    #[arg(long, default_value_t = 85)]
    pub min_length: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MaskFlags {
    /// Probability of removing each entry (default 0.2 unless a Gaussian
    /// pattern is given).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Grid index around which a Gaussian pattern removes entries.
    #[arg(long)]
    pub gaussian_center: Option<f64>,
    /// Spread of the Gaussian pattern, in grid steps.
    #[arg(long)]
    pub gaussian_sd: Option<f64>,
}

impl MaskFlags {
    fn mode(&self) -> Result<MaskMode> {
        let mode = match (self.tau, self.gaussian_center, self.gaussian_sd) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(Error::config("tau", "cannot be combined with a Gaussian pattern"))
            }
            (tau, None, None) => MaskMode::Bernoulli { tau: tau.unwrap_or(0.2) },
            (None, Some(center), Some(sd)) => MaskMode::GaussianPattern { center, sd },
            (None, None, Some(_)) => return Err(Error::config("gaussian-center", "required with --gaussian-sd")),
            (None, Some(_), None) => return Err(Error::config("gaussian-sd", "required with --gaussian-center")),
        };
        let flag = if matches!(mode, MaskMode::Bernoulli { .. }) { "tau" } else { "gaussian-sd" };
        MaskSpec { mode, seed: 0, scope: MaskScope::Eval }
            .validate()
            .map_err(|e| Error::config(flag, e.to_string()))?;
        Ok(mode)
    }
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub mask: MaskFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ledger_out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.03)]
    pub lr: f64,
    /// Segments per optimizer step.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    /// Initializations screened before the full run.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 30)]
    pub screen_epochs: usize,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            restarts: self.restarts,
            screen_epochs: self.screen_epochs,
            seed,
            ..TrainConfig::default()
        };
        let checks = [
            ("lr", self.lr.is_finite() && self.lr > 0.0, "must be positive"),
            ("epochs", self.epochs >= 1, "must be at least 1"),
            ("batch", self.batch >= 1, "must be at least 1"),
            ("patience", self.patience >= 1, "must be at least 1"),
            ("restarts", self.restarts >= 1, "must be at least 1"),
            (
                "validation-fraction",
                self.validation_fraction > 0.0 && self.validation_fraction < 1.0,
                "must lie in (0, 1)",
            ),
        ];
        if let Some((flag, _, why)) = checks.iter().find(|c| !c.1) {
            return Err(Error::config(flag, *why));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Optional per-epoch loss trace (CSV).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Masked cohort.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Model checkpoint; repeat to score several (their fold column is the
    /// model's position).
    #[arg(long)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub report_out: PathBuf,
    #[arg(long)]
    pub eta_out: Option<PathBuf>,
    /// Seed of the soft-impute holdout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where a cross-validation gets its complete cohort.
#[derive(Debug, Clone, Args)]
pub struct SourceFlags {
    /// Complete cohort file; a synthetic cohort is generated when absent.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 382)]
    pub n: usize,
    #[arg(long, default_value_t = 85)]
    pub length: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_sd: f64,
    /// Seed of the synthetic cohort.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl SourceFlags {
    fn load(&self) -> Result<Cohort> {
        match &self.input {
            Some(path) => read_cohort_file(path),
            None => synth(self.n, self.length, self.noise_sd, self.data_seed),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct HarnessFlags {
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Comma-separated subset of mrnn, spline, soft_impute.
    #[arg(long, value_delimiter = ',', default_value = "mrnn,spline,soft_impute")]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Record wall-clock runtimes in the report.
    #[arg(long)]
    pub timing: bool,
}

impl HarnessFlags {
    fn config(&self, mask: MaskMode) -> Result<CvConfig> {
        let mut methods = self.methods.clone();
        methods.sort_unstable();
        methods.dedup();
        Ok(CvConfig {
            folds: self.folds,
            mask,
            methods,
            train: self.train.config(0)?,
            seed: self.seed,
            workers: self.workers,
            timing: self.timing,
        })
    }
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub source: SourceFlags,
    #[command(flatten)]
    pub mask: MaskFlags,
    #[command(flatten)]
    pub harness: HarnessFlags,
    #[arg(long)]
    pub report_out: PathBuf,
    #[arg(long)]
    pub eta_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// tau, L or N.
    #[arg(long)]
    pub axis: Axis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[command(flatten)]
    pub source: SourceFlags,
    /// Missing threshold for the L and N axes.
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    #[command(flatten)]
    pub harness: HarnessFlags,
    #[arg(long)]
    pub report_out: PathBuf,
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Largest acceptable relative gradient error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    eprintln!("gapfill {} {:?}", env!("CARGO_PKG_VERSION"), cli.command);
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Synth(a) => {
            let c = synth(a.n, a.length, a.noise_sd, a.seed)?;
            write_to(&a.out, |b| write_cohort(&c, b))?;
        }
        Command::Ingest(a) => {
            if !(0.0..=100.0).contains(&a.min_confidence) {
                return Err(Error::config("min-confidence", "must lie in [0, 100]"));
            }
            if a.min_length == 0 {
                return Err(Error::config("min-length", "must be at least 1"));
            }
            let ingested = ingest_csv(read_file(&a.input)?.as_slice(), a.min_confidence).map_err(at(&a.input))?;
            eprintln!("kept {} records, dropped {} below confidence {}", ingested.records.len(), ingested.dropped, a.min_confidence);
            let cohort = select_cohort(&ingested.records, &ingested.segments, a.min_length)?;
            eprintln!("cohort: {} segments x {} minutes", cohort.n_segments(), cohort.len());
            write_to(&a.out, |b| write_cohort(&cohort, b))?;
        }
        Command::Mask(a) => {
            let spec = MaskSpec { mode: a.mask.mode()?, seed: a.seed, scope: MaskScope::Eval };
            let cohort = read_cohort_file(&a.input)?;
            let (masked, ledger) = apply_mask(&cohort, &spec)?;
            write_to(&a.out, |b| write_cohort(&masked, b))?;
            write_to(&a.ledger_out, |b| write_ledger(&ledger, b))?;
        }
        Command::Train(a) => {
            let cfg = a.train.config(a.seed)?;
            let cohort = read_cohort_file(&a.input)?;
            let params = fit_norm_params(&cohort)?;
            let outcome = train(&normalize_with(&cohort, &params)?, &cfg)?;
            eprintln!("best epoch {} of {}", outcome.best_epoch, outcome.trace.len() - 1);
            let checkpoint = Checkpoint { model: outcome.model, norm_params: params };
            write_to(&a.model_out, |b| write_checkpoint(&checkpoint, b))?;
            if let Some(path) = &a.trace_out {
                let mut text = String::from("epoch,train_loss,validation_loss\n");
                for s in &outcome.trace {
                    text.push_str(&format!("{},{},{}\n", s.epoch, s.train_loss, s.validation_loss));
                }
                write_bytes(path, text.as_bytes())?;
            }
        }
        Command::Impute(a) => {
            let checkpoint = read_checkpoint_file(&a.model)?;
            let cohort = read_cohort_file(&a.input)?;
            let filled = impute_raw(&checkpoint, &cohort)?;
            write_to(&a.out, |b| write_cohort(&filled, b))?;
        }
        Command::Eval(a) => {
            let report = evaluate(a)?;
            print_means(&report);
            emit_report(&report, &a.report_out)?;
            if let Some(path) = &a.eta_out {
                emit_eta(&report, None, path)?;
            }
        }
        Command::Cv(a) => {
            let cfg = a.harness.config(a.mask.mode()?)?;
            let cohort = a.source.load()?;
            let report = cross_validate(&cohort, &cfg)?;
            print_means(&report);
            emit_report(&report, &a.report_out)?;
            if let Some(path) = &a.eta_out {
                emit_eta(&report, None, path)?;
            }
        }
        Command::Sweep(a) => {
            let tau = MaskFlags { tau: Some(a.tau), gaussian_center: None, gaussian_sd: None }.mode()?;
            let cfg = a.harness.config(tau)?;
            let cohort = a.source.load()?;
            let report = sweep(&cohort, a.axis, &a.grid, &cfg)?;
            print_means(&report);
            emit_report(&report, &a.report_out)?;
            if let Some(path) = &a.plot_out {
                emit_plot(&report, a.axis, path)?;
            }
        }
        Command::Gradcheck(a) => {
            let err = gradient_check(a.seed)?;
            println!("max relative error: {err:e}");
            if err >= GRADCHECK_TOLERANCE {
                eprintln!("gradient check failed: {err:e} >= {GRADCHECK_TOLERANCE:e}");
                return Ok(2);
            }
        }
    }
    Ok(0)
}

fn synth(n: usize, length: usize, noise_sd: f64, seed: u64) -> Result<Cohort> {
    if n == 0 {
        return Err(Error::config("n", "must be at least 1"));
    }
    if length == 0 {
        return Err(Error::config("length", "must be at least 1"));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::config("noise-sd", "must be finite and >= 0"));
    }
    Ok(synthesize_cohort(&SynthSpec::new(n, length, noise_sd, seed))?)
}

/// Maximum relative error between analytic and central-difference gradients
/// of the full training loss, on a seeded two-segment, six-minute, two-stream
/// masked cohort with a freshly initialized model.
pub fn gradient_check(seed: u64) -> Result<f64> {
    let cohort = synthesize_cohort(&SynthSpec::new(2, 6, 0.05, derive(seed, &[label("data")])))?;
    let spec = MaskSpec::bernoulli(0.3, derive(seed, &[label("mask")]))?;
    let (masked, _) = apply_mask(&cohort, &spec)?;
    let params = fit_norm_params(&masked)?;
    let masked = normalize_with(&masked, &params)?;
    let triplets: Vec<_> = masked.segments.iter().map(gapfill_core::masking::build_triplet).collect();
    let model = MrnnModel::new(MrnnDims::new(2), default_delta_scale(masked.timestamps()), derive(seed, &[label("init")]))?;
    let (_, analytic) = loss_and_gradient(&model, &triplets)?;
    let err = grad_check(
        |flat| model.with_flat(flat).and_then(|m| total_loss(&m, &triplets)).unwrap_or(f64::NAN),
        &analytic,
        &model.flatten(),
        1e-5,
    )?;
    Ok(err)
}

/// Imputes a raw-unit cohort under a checkpoint's normalization; observed
/// entries are copied through untouched.
fn impute_raw(checkpoint: &Checkpoint, cohort: &Cohort) -> Result<Cohort> {
    let normalized = normalize_with(cohort, &checkpoint.norm_params)?;
    let mut filled = denormalize(&impute(&checkpoint.model, &normalized)?)?;
    for (out, src) in filled.segments.iter_mut().zip(&cohort.segments) {
        for d in 0..src.n_streams() {
            for t in 0..src.len() {
                if src.observed[d][t] {
                    out.values[d][t] = src.values[d][t];
                }
            }
        }
    }
    Ok(filled)
}

fn evaluate(a: &EvalArgs) -> Result<ComparisonReport> {
    use gapfill_core::baselines::{cohort_to_matrix, matrix_to_cohort, soft_impute, spline_impute, SoftImputeConfig};
    use gapfill_core::metrics::rmse;

    let cohort = read_cohort_file(&a.input)?;
    let ledger = read_ledger(read_file(&a.ledger)?.as_slice()).map_err(at(&a.ledger))?;
    ledger.check_against(&cohort)?;
    let checkpoints = a.model.iter().map(|p| read_checkpoint_file(p)).collect::<Result<Vec<_>>>()?;
    let reference: Vec<NormParams> = match checkpoints.first() {
        Some(c) => c.norm_params.clone(),
        None => fit_norm_params(&cohort)?,
    };
    let scored_ledger = ledger.normalized(&reference)?;
    let normalized = normalize_with(&cohort, &reference)?;
    let row = |method, fold, rmse| ReportRow {
        method,
        axis: Axis::None,
        axis_value: None,
        fold,
        n_segments: cohort.n_segments(),
        seq_length: cohort.len(),
        tau: None,
        rmse,
        runtime_s: 0.0,
    };

    let mut rows = Vec::new();
    for (i, c) in checkpoints.iter().enumerate() {
        let filled = normalize_with(&impute_raw(c, &cohort)?, &reference)?;
        rows.push(row(Method::Mrnn, i, rmse(&filled, &scored_ledger)?));
    }
    let mut splined = normalized.clone();
    splined.segments.iter_mut().for_each(|s| *s = spline_impute(s));
    rows.push(row(Method::Spline, 0, rmse(&splined, &scored_ledger)?));

    let (matrix, mask) = cohort_to_matrix(&normalized);
    let cfg = SoftImputeConfig { seed: a.seed, ..SoftImputeConfig::for_matrix(&matrix, &mask)? };
    let completed = soft_impute(&matrix, &mask, &cfg)?.completed;
    let filled = matrix_to_cohort(&completed, &vec![true; mask.len()], &normalized)?;
    rows.push(row(Method::SoftImpute, 0, rmse(&filled, &scored_ledger)?));
    ComparisonReport::new(rows)
}

fn print_means(report: &ComparisonReport) {
    for v in report.axis_values() {
        for m in report.methods() {
            if let Some(mean) = report.mean_rmse(m, v) {
                let at = v.map(|x| format!(" at {x}")).unwrap_or_default();
                println!("{}{at}: mean RMSE {mean:.6}", m.name());
            }
        }
    }
}

fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Schema(message) => Error::Format { path: path.to_path_buf(), message },
        Error::Row { line, message } => Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") },
        other => other,
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_to(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(at(path))?;
    write_bytes(path, &buf)
}

fn read_cohort_file(path: &Path) -> Result<Cohort> {
    read_cohort(read_file(path)?.as_slice()).map_err(at(path))
}

fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(read_file(path)?.as_slice()).map_err(at(path))
}
