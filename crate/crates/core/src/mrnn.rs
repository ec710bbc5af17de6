//! Multi-directional recurrent imputer.
//!
//! The interpolation block estimates each stream from its own history: a
//! stack of GRUs runs forward in time and another runs backward, both shared
//! across streams and fed `(z, m, delta)` per step, where the backward stack
//! takes the time to the next observation in place of the time since the last
//! one. The estimate at `t` reads the forward stack's state at `t - 1` and
//! the backward stack's state at `t + 1`, so the value at `t` never reaches
//! its own estimate. Each stream has its own sigmoid readout.
//!
//! The imputation block is one sigmoid affine layer over
//! `[z_t * m_t ; m_t ; x~_t]`. Its weights from a stream's own `z` and `m`
//! entries are held at zero, which keeps the output at `(d, t)` independent
//! of the observation at `(d, t)`; training can then score every observed
//! entry without the layer learning to copy its input.
//!
//! Both blocks are trained jointly on the per-segment masked squared error of
//! the final estimate.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Cohort;
use crate::masking::{build_triplet, MaskedTriplet};
use crate::nncore::{adam_step, init_params, sigmoid, AdamConfig, AdamState, BlockPlan, GruParams, GruSequence, Matrix, ParamStore};
use crate::seed::{derive, label};
use crate::{Error, Result};

/// Checkpoint layout version written alongside the parameters.
pub const FORMAT_VERSION: u32 = 1;

/// Per-step recurrent input: observed value, mask bit, scaled delta.
const STEP_INPUT: usize = 3;

const GRU_BLOCKS: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MrnnDims {
    pub streams: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl MrnnDims {
    pub fn new(streams: usize) -> Self {
        Self { streams, hidden: 2, layers: 2 }
    }

    fn validate(&self) -> Result<()> {
        if self.streams == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }

    fn plan(&self) -> Vec<BlockPlan> {
        let (d, h) = (self.streams, self.hidden);
        let mut plan = Vec::new();
        for dir in ["fwd", "bwd"] {
            for l in 0..self.layers {
                let input = if l == 0 { STEP_INPUT } else { h };
                for name in GRU_BLOCKS {
                    let full = format!("interp.{dir}.l{l}.{name}");
                    plan.push(match (name.starts_with('b'), name.starts_with('w')) {
                        (true, _) => BlockPlan::bias(full, h),
                        (false, true) => BlockPlan::matrix(full, h, input),
                        (false, false) => BlockPlan::matrix(full, h, h),
                    });
                }
            }
        }
        plan.push(BlockPlan::matrix("interp.out.w", d, 2 * h));
        plan.push(BlockPlan::bias("interp.out.b", d));
        plan.push(BlockPlan::matrix("impute.w", d, 3 * d));
        plan.push(BlockPlan::bias("impute.b", d));
        plan
    }
}

/// Trainable parameters of both blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MrnnModel {
    dims: MrnnDims,
    delta_scale: f64,
    params: ParamStore,
}

impl MrnnModel {
    /// Freshly initialized model; deterministic in `seed`.
    pub fn new(dims: MrnnDims, delta_scale: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut params = init_params(&dims.plan(), seed)?;
        let mut flat = params.flatten();
        zero_self_weights(&dims, &mut flat);
        params.set_flat(&flat)?;
        Self::from_params(dims, delta_scale, params)
    }

    /// Wraps a stored parameter set, checking its layout and constraints.
    pub fn from_params(dims: MrnnDims, delta_scale: f64, params: ParamStore) -> Result<Self> {
        dims.validate()?;
        if !(delta_scale.is_finite() && delta_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("delta scale {delta_scale} must be positive")));
        }
        let plan = dims.plan();
        let layout_ok = plan.len() == params.blocks().len()
            && plan.iter().zip(params.blocks()).all(|(p, b)| p.name == b.name && p.shape == b.shape);
        if !layout_ok {
            return Err(Error::Shape(format!("parameter blocks do not match model dimensions {dims:?}")));
        }
        let model = Self { dims, delta_scale, params };
        let w = &model.net().imp_w;
        let d = dims.streams;
        if (0..d).any(|i| w[(i, i)] != 0.0 || w[(i, d + i)] != 0.0) {
            return Err(Error::InvalidArgument("imputation weights on a stream's own entries must be zero".into()));
        }
        Ok(model)
    }

    pub fn dims(&self) -> MrnnDims {
        self.dims
    }

    pub fn delta_scale(&self) -> f64 {
        self.delta_scale
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.flatten()
    }

    /// Same architecture with a new flat parameter vector. The zero-diagonal
    /// constraint is re-imposed.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut flat = flat.to_vec();
        zero_self_weights(&self.dims, &mut flat);
        Ok(Self { params: self.params.unflatten(&flat)?, ..self.clone() })
    }

    fn net(&self) -> Net {
        Net::from_flat(&self.dims, &self.params.flatten())
    }

    fn check_triplet(&self, t: &MaskedTriplet) -> Result<()> {
        let len = t.len();
        let rows_ok = |g: &Vec<Vec<f64>>| g.len() == self.dims.streams && g.iter().all(|r| r.len() == len);
        if len == 0 || !rows_ok(&t.z) || !rows_ok(&t.m) || !rows_ok(&t.delta) {
            return Err(Error::Shape(format!(
                "triplet with {} streams of length {len} does not fit a {}-stream model",
                t.n_streams(),
                self.dims.streams
            )));
        }
        Ok(())
    }
}

/// Zeroes the imputation weights from each stream's own `z` and `m` inputs.
fn zero_self_weights(dims: &MrnnDims, flat: &mut [f64]) {
    let d = dims.streams;
    let off = flat.len() - d - d * 3 * d;
    for i in 0..d {
        flat[off + i * 3 * d + i] = 0.0;
        flat[off + i * 3 * d + d + i] = 0.0;
    }
}

/// `1 / (L * spacing)`, with the spacing taken as the mean timestamp gap.
pub fn default_delta_scale(timestamps: &[i64]) -> f64 {
    let len = timestamps.len();
    let spacing = if len >= 2 {
        (timestamps[len - 1] - timestamps[0]) as f64 / (len - 1) as f64
    } else {
        1.0
    };
    1.0 / (len.max(1) as f64 * spacing.max(f64::MIN_POSITIVE))
}

/// Unpacked parameters (or gradients, with the same layout).
#[derive(Debug, Clone)]
struct Net {
    fwd: Vec<GruParams>,
    bwd: Vec<GruParams>,
    out_w: Matrix,
    out_b: Vec<f64>,
    imp_w: Matrix,
    imp_b: Vec<f64>,
}

impl Net {
    fn zeros(dims: &MrnnDims) -> Self {
        let (d, h) = (dims.streams, dims.hidden);
        let stack = || {
            (0..dims.layers)
                .map(|l| GruParams::zeros(if l == 0 { STEP_INPUT } else { h }, h))
                .collect::<Vec<_>>()
        };
        Self {
            fwd: stack(),
            bwd: stack(),
            out_w: Matrix::zeros(d, 2 * h),
            out_b: vec![0.0; d],
            imp_w: Matrix::zeros(d, 3 * d),
            imp_b: vec![0.0; d],
        }
    }

    fn slots(&mut self) -> Vec<&mut [f64]> {
        let mut slots: Vec<&mut [f64]> = Vec::new();
        for g in self.fwd.iter_mut().chain(self.bwd.iter_mut()) {
            slots.extend(g.blocks_mut());
        }
        slots.push(self.out_w.as_mut_slice());
        slots.push(&mut self.out_b);
        slots.push(self.imp_w.as_mut_slice());
        slots.push(&mut self.imp_b);
        slots
    }

    fn from_flat(dims: &MrnnDims, flat: &[f64]) -> Self {
        let mut net = Self::zeros(dims);
        let mut off = 0;
        for slot in net.slots() {
            let n = slot.len();
            slot.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        net
    }

    fn into_flat(mut self) -> Vec<f64> {
        self.slots().into_iter().flat_map(|s| s.iter().copied()).collect()
    }
}

/// Forward intermediates of one stream through the interpolation block.
struct StreamTrace {
    fwd: Vec<GruSequence>,
    /// Runs over reversed time: step `j` is time `L - 1 - j`.
    bwd: Vec<GruSequence>,
    /// Readout inputs `[h_fwd(t-1) ; h_bwd(t+1)]`, row-major `L x 2H`.
    states: Vec<f64>,
    xtilde: Vec<f64>,
}

struct SegmentTrace {
    streams: Vec<StreamTrace>,
    /// Imputation-layer inputs, row-major `L x 3D`.
    u: Vec<f64>,
    /// `xhat[d][t]`.
    xhat: Vec<Vec<f64>>,
}

fn run_stack(stack: &[GruParams], inputs: Vec<f64>) -> Vec<GruSequence> {
    let mut seqs: Vec<GruSequence> = Vec::with_capacity(stack.len());
    let mut next = inputs;
    for p in stack {
        let seq = GruSequence::run_flat(p, next);
        next = seq.outputs_flat().to_vec();
        seqs.push(seq);
    }
    seqs
}

/// Time from each step to the next observation, the mirror image of the
/// forward delta. Grid gaps are recovered from the forward delta.
fn reverse_delta(delta: &[f64], m: &[f64]) -> Vec<f64> {
    let len = delta.len();
    let mut out = vec![0.0; len];
    for t in (0..len.saturating_sub(1)).rev() {
        let gap = delta[t + 1] - (1.0 - m[t]) * delta[t];
        out[t] = gap + (1.0 - m[t + 1]) * out[t + 1];
    }
    out
}

fn forward(net: &Net, dims: &MrnnDims, delta_scale: f64, trip: &MaskedTriplet) -> SegmentTrace {
    let (d_count, h) = (dims.streams, dims.hidden);
    let len = trip.len();
    let streams: Vec<StreamTrace> = (0..d_count)
        .map(|d| {
            let back_delta = reverse_delta(&trip.delta[d], &trip.m[d]);
            let inputs: Vec<f64> = (0..len)
                .flat_map(|t| [trip.z[d][t], trip.m[d][t], trip.delta[d][t] * delta_scale])
                .collect();
            let reversed: Vec<f64> = (0..len)
                .rev()
                .flat_map(|t| [trip.z[d][t], trip.m[d][t], back_delta[t] * delta_scale])
                .collect();
            let fwd = run_stack(&net.fwd, inputs);
            let bwd = run_stack(&net.bwd, reversed);
            let f_top = fwd.last().expect("at least one layer");
            let b_top = bwd.last().expect("at least one layer");
            let mut states = vec![0.0; len * 2 * h];
            let mut xtilde = Vec::with_capacity(len);
            let w = net.out_w.row(d);
            for (t, s) in states.chunks_exact_mut(2 * h).enumerate() {
                if t > 0 {
                    s[..h].copy_from_slice(f_top.output(t - 1));
                }
                if t + 1 < len {
                    s[h..].copy_from_slice(b_top.output(len - 2 - t));
                }
                let a = net.out_b[d] + w.iter().zip(s.iter()).map(|(w, x)| w * x).sum::<f64>();
                xtilde.push(sigmoid(a));
            }
            StreamTrace { fwd, bwd, states, xtilde }
        })
        .collect();

    let width = 3 * d_count;
    let mut u = vec![0.0; len * width];
    let mut xhat = vec![vec![0.0; len]; d_count];
    let mut a = vec![0.0; d_count];
    for (t, ut) in u.chunks_exact_mut(width).enumerate() {
        for d in 0..d_count {
            ut[d] = trip.z[d][t] * trip.m[d][t];
            ut[d_count + d] = trip.m[d][t];
            ut[2 * d_count + d] = streams[d].xtilde[t];
        }
        a.copy_from_slice(&net.imp_b);
        net.imp_w.matvec_acc(ut, &mut a);
        for d in 0..d_count {
            xhat[d][t] = sigmoid(a[d]);
        }
    }
    SegmentTrace { streams, u, xhat }
}

fn backward(net: &Net, dims: &MrnnDims, trace: &SegmentTrace, dxhat: &[Vec<f64>], grads: &mut Net) {
    let (d_count, h) = (dims.streams, dims.hidden);
    let width = 3 * d_count;
    let len = trace.u.len() / width;
    let mut dxtilde = vec![vec![0.0; len]; d_count];
    let mut du = vec![0.0; width];
    let mut da = vec![0.0; d_count];
    for (t, ut) in trace.u.chunks_exact(width).enumerate() {
        for d in 0..d_count {
            let y = trace.xhat[d][t];
            da[d] = dxhat[d][t] * y * (1.0 - y);
        }
        grads.imp_w.add_outer(&da, ut);
        grads.imp_b.iter_mut().zip(&da).for_each(|(g, v)| *g += v);
        du.iter_mut().for_each(|v| *v = 0.0);
        net.imp_w.t_matvec_acc(&da, &mut du);
        for d in 0..d_count {
            dxtilde[d][t] = du[2 * d_count + d];
        }
    }
    for i in 0..d_count {
        grads.imp_w[(i, i)] = 0.0;
        grads.imp_w[(i, d_count + i)] = 0.0;
    }

    for (d, st) in trace.streams.iter().enumerate() {
        let mut d_fwd = vec![0.0; len * h];
        let mut d_bwd = vec![0.0; len * h];
        for (t, s) in st.states.chunks_exact(2 * h).enumerate() {
            let y = st.xtilde[t];
            let da = dxtilde[d][t] * y * (1.0 - y);
            if da == 0.0 {
                continue;
            }
            grads.out_b[d] += da;
            for (k, v) in s.iter().enumerate() {
                grads.out_w[(d, k)] += da * v;
            }
            if t > 0 {
                for k in 0..h {
                    d_fwd[(t - 1) * h + k] += da * net.out_w[(d, k)];
                }
            }
            if t + 1 < len {
                for k in 0..h {
                    d_bwd[(len - 2 - t) * h + k] += da * net.out_w[(d, h + k)];
                }
            }
        }
        backprop_stack(&net.fwd, &st.fwd, d_fwd, &mut grads.fwd);
        backprop_stack(&net.bwd, &st.bwd, d_bwd, &mut grads.bwd);
    }
}

fn backprop_stack(stack: &[GruParams], seqs: &[GruSequence], top_grad: Vec<f64>, grads: &mut [GruParams]) {
    let mut dh = top_grad;
    for l in (0..stack.len()).rev() {
        dh = seqs[l]
            .backward_flat(&stack[l], &dh, &mut grads[l])
            .expect("trace recorded with these parameters");
    }
}

/// Per-segment masked squared error and its gradient on `xhat`.
fn masked_loss(xhat: &[Vec<f64>], trip: &MaskedTriplet) -> (f64, Vec<Vec<f64>>) {
    let count = trip.observed_count();
    let mut grad = vec![vec![0.0; trip.len()]; trip.n_streams()];
    if count == 0.0 {
        return (0.0, grad);
    }
    let mut sum = 0.0;
    for d in 0..trip.n_streams() {
        for t in 0..trip.len() {
            let m = trip.m[d][t];
            if m != 0.0 {
                let r = xhat[d][t] - trip.z[d][t];
                sum += m * r * r;
                grad[d][t] = 2.0 * m * r / count;
            }
        }
    }
    (sum / count, grad)
}

/// Estimates and interpolation-block outputs for one triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub xtilde: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
}

/// Both blocks on one triplet.
pub fn predict(model: &MrnnModel, triplet: &MaskedTriplet) -> Result<Prediction> {
    model.check_triplet(triplet)?;
    let trace = forward(&model.net(), &model.dims, model.delta_scale, triplet);
    Ok(Prediction {
        xtilde: trace.streams.into_iter().map(|s| s.xtilde).collect(),
        xhat: trace.xhat,
    })
}

/// Within-stream estimates `x~[d][t]` of the interpolation block.
pub fn interpolate_block(model: &MrnnModel, triplet: &MaskedTriplet) -> Result<Vec<Vec<f64>>> {
    Ok(predict(model, triplet)?.xtilde)
}

/// Final estimate at one time step from `z_t`, `m_t` and `x~_t`.
pub fn impute_block(model: &MrnnModel, z_t: &[f64], m_t: &[f64], xtilde_t: &[f64]) -> Result<Vec<f64>> {
    let d = model.dims.streams;
    if z_t.len() != d || m_t.len() != d || xtilde_t.len() != d {
        return Err(Error::Shape(format!("imputation block expects three vectors of length {d}")));
    }
    let net = model.net();
    let u: Vec<f64> = z_t.iter().zip(m_t).map(|(z, m)| z * m).chain(m_t.iter().copied()).chain(xtilde_t.iter().copied()).collect();
    let mut a = net.imp_b.clone();
    net.imp_w.matvec_acc(&u, &mut a);
    Ok(a.into_iter().map(sigmoid).collect())
}

/// Total masked loss over segments: per segment, the squared error of the
/// final estimate averaged over its observed entries; segments without
/// observations contribute nothing.
pub fn total_loss(model: &MrnnModel, triplets: &[MaskedTriplet]) -> Result<f64> {
    let net = model.net();
    let mut sum = 0.0;
    for t in triplets {
        model.check_triplet(t)?;
        let trace = forward(&net, &model.dims, model.delta_scale, t);
        sum += masked_loss(&trace.xhat, t).0;
    }
    Ok(sum)
}

/// [`total_loss`] and its gradient with respect to the flat parameters.
pub fn loss_and_gradient(model: &MrnnModel, triplets: &[MaskedTriplet]) -> Result<(f64, Vec<f64>)> {
    for t in triplets {
        model.check_triplet(t)?;
    }
    let net = model.net();
    let mut grads = Net::zeros(&model.dims);
    let mut sum = 0.0;
    for t in triplets {
        sum += accumulate(&net, model, t, &mut grads);
    }
    Ok((sum, grads.into_flat()))
}

fn accumulate(net: &Net, model: &MrnnModel, trip: &MaskedTriplet, grads: &mut Net) -> f64 {
    if trip.observed_count() == 0.0 {
        return 0.0;
    }
    let trace = forward(net, &model.dims, model.delta_scale, trip);
    let (loss, dxhat) = masked_loss(&trace.xhat, trip);
    backward(net, &model.dims, &trace, &dxhat, grads);
    loss
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Segments per optimizer step.
    pub batch: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    /// Initializations screened before the full run.
    pub restarts: usize,
    /// Epochs each screened initialization trains for; the one with the
    /// lowest validation loss continues.
    pub screen_epochs: usize,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            epochs: 500,
            batch: 8,
            patience: 100,
            validation_fraction: 0.2,
            restarts: 3,
            screen_epochs: 30,
            hidden: 2,
            layers: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("learning rate must be positive");
        }
        if self.epochs == 0 || self.batch == 0 || self.patience == 0 || self.restarts == 0 {
            return fail("epochs, batch, patience and restarts must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation fraction must lie in (0, 1)");
        }
        if self.hidden == 0 || self.layers == 0 {
            return fail("hidden size and layer count must be at least 1");
        }
        Ok(())
    }
}

/// Mean per-segment losses after an epoch (epoch 0 is the initialization).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MrnnModel,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Fits a model on a masked, normalized cohort with Adam and early stopping.
///
/// A seeded fraction of the usable segments is held out for validation
/// (when there are at least two); the parameters with the lowest validation
/// loss are returned.
pub fn train(cohort: &Cohort, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if cohort.norm_params.is_none() {
        return Err(Error::Precondition("training expects a normalized cohort".into()));
    }
    let triplets: Vec<MaskedTriplet> = cohort
        .segments
        .iter()
        .map(build_triplet)
        .filter(|t| t.observed_count() > 0.0)
        .collect();
    if triplets.is_empty() {
        return Err(Error::Untrainable);
    }

    let n = triplets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive(config.seed, &[label("shuffle")]));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 2 {
        (libm::round(config.validation_fraction * n as f64) as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_idx = train_idx.to_vec();
    let val_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx.to_vec() };
    let subset = |idx: &[usize]| idx.iter().map(|&i| triplets[i].clone()).collect::<Vec<_>>();
    let val_set = subset(&val_idx);
    let train_set = subset(&train_idx);

    let dims = MrnnDims { streams: cohort.n_streams(), hidden: config.hidden, layers: config.layers };
    let delta_scale = default_delta_scale(cohort.timestamps());
    let data = Split { all: &triplets, train: &train_set, val: &val_set };

    let mut runs = Vec::with_capacity(config.restarts);
    runs.push(Run::new(MrnnModel::new(dims, delta_scale, derive(config.seed, &[label("init")]))?, rng, train_idx, &data)?);
    for r in 1..config.restarts as u64 {
        let model = MrnnModel::new(dims, delta_scale, derive(config.seed, &[label("init"), r]))?;
        let rng = ChaCha8Rng::seed_from_u64(derive(config.seed, &[label("shuffle"), r]));
        runs.push(Run::new(model, rng, runs[0].train_idx.clone(), &data)?);
    }
    if runs.len() > 1 {
        for run in &mut runs {
            for _ in 0..config.screen_epochs.min(config.epochs) {
                if run.epoch(config, &data)? {
                    break;
                }
            }
        }
    }
    let mut run = runs
        .into_iter()
        .reduce(|a, b| if b.best_val < a.best_val { b } else { a })
        .expect("at least one restart");
    while run.trace.len() <= config.epochs && !run.stopped {
        run.epoch(config, &data)?;
    }
    Ok(TrainOutcome { model: run.model.with_flat(&run.best_flat)?, trace: run.trace, best_epoch: run.best_epoch })
}

struct Split<'a> {
    all: &'a [MaskedTriplet],
    train: &'a [MaskedTriplet],
    val: &'a [MaskedTriplet],
}

fn mean_loss(model: &MrnnModel, set: &[MaskedTriplet]) -> Result<f64> {
    Ok(total_loss(model, set)? / set.len() as f64)
}

/// One initialization's optimizer state and early-stopping bookkeeping.
struct Run {
    model: MrnnModel,
    flat: Vec<f64>,
    adam: AdamState,
    rng: ChaCha8Rng,
    train_idx: Vec<usize>,
    trace: Vec<EpochStats>,
    best_val: f64,
    best_flat: Vec<f64>,
    best_epoch: usize,
    stale: usize,
    stopped: bool,
}

impl Run {
    fn new(model: MrnnModel, rng: ChaCha8Rng, train_idx: Vec<usize>, data: &Split) -> Result<Self> {
        let flat = model.flatten();
        let best_val = mean_loss(&model, data.val)?;
        let trace = vec![EpochStats { epoch: 0, train_loss: mean_loss(&model, data.train)?, validation_loss: best_val }];
        Ok(Self {
            adam: AdamState::new(flat.len()),
            best_flat: flat.clone(),
            flat,
            model,
            rng,
            train_idx,
            trace,
            best_val,
            best_epoch: 0,
            stale: 0,
            stopped: false,
        })
    }

    /// Runs one epoch; returns whether early stopping triggered.
    fn epoch(&mut self, config: &TrainConfig, data: &Split) -> Result<bool> {
        let epoch = self.trace.len();
        let dims = self.model.dims;
        let adam_cfg = AdamConfig::with_lr(config.lr);
        self.train_idx.shuffle(&mut self.rng);
        let mut epoch_loss = 0.0;
        for chunk in self.train_idx.chunks(config.batch) {
            let net = Net::from_flat(&dims, &self.flat);
            let mut grads = Net::zeros(&dims);
            for &i in chunk {
                epoch_loss += accumulate(&net, &self.model, &data.all[i], &mut grads);
            }
            let g = grads.into_flat();
            adam_step(&mut self.flat, &g, &mut self.adam, &adam_cfg)?;
            zero_self_weights(&dims, &mut self.flat);
        }
        if !epoch_loss.is_finite() || self.flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        self.model = self.model.with_flat(&self.flat)?;
        let val = mean_loss(&self.model, data.val)?;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let train_loss = epoch_loss / self.train_idx.len() as f64;
        self.trace.push(EpochStats { epoch, train_loss, validation_loss: val });
        if val < self.best_val {
            self.best_val = val;
            self.best_flat.clone_from(&self.flat);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
            self.stopped = self.stale >= config.patience;
        }
        Ok(self.stopped)
    }
}

/// Single imputation: fills every missing entry with the model's final
/// estimate and passes observed entries through.
pub fn impute(model: &MrnnModel, cohort: &Cohort) -> Result<Cohort> {
    if cohort.n_streams() != model.dims.streams {
        return Err(Error::Shape(format!(
            "model has {} streams, cohort has {}",
            model.dims.streams,
            cohort.n_streams()
        )));
    }
    let net = model.net();
    let mut out = cohort.clone();
    for s in &mut out.segments {
        if s.is_complete() {
            continue;
        }
        let trip = build_triplet(s);
        let trace = forward(&net, &model.dims, model.delta_scale, &trip);
        for (d, (vals, obs)) in s.values.iter_mut().zip(s.observed.iter_mut()).enumerate() {
            for t in 0..vals.len() {
                if !obs[t] {
                    vals[t] = trace.xhat[d][t];
                    obs[t] = true;
                }
            }
        }
    }
    Ok(out)
}
