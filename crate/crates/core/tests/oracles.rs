//! Frozen values checked against independent reference computations.

use gapfill_core::baselines::{soft_impute, NaturalCubicSpline, SoftImputeConfig};
use gapfill_core::data::{
    fit_norm_params, normalize_with, select_cohort, synthesize_cohort, Cohort, GeoPoint, RawRecord, RoadSegment,
    SegmentSeries, SynthSpec,
};
use gapfill_core::masking::{apply_mask, build_triplet, MaskSpec};
use gapfill_core::metrics::rmse;
use gapfill_core::mrnn::{impute, predict, total_loss, train, MrnnDims, MrnnModel, TrainConfig};
use gapfill_core::nncore::{gru_cell, init_params, BlockPlan, GruParams, Matrix};

fn segment(id: &str) -> RoadSegment {
    RoadSegment::new(id, GeoPoint { lat: 43.6, lon: -79.4 }, GeoPoint { lat: 43.6, lon: -79.39 }, 0.8).unwrap()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn spline_five_knots_matches_dense_solve() {
    let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
    let ys = [0.0, 0.8, 0.9, 0.2, 0.1];
    // Piecewise cubic a_i + b_i u + c_i u^2 + d_i u^3 with u = x - x_i: 16
    // unknowns from interpolation, C1/C2 continuity and natural ends.
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut eq = |coef: Vec<(usize, f64)>, v: f64| {
        let mut r = vec![0.0; 16];
        coef.into_iter().for_each(|(i, c)| r[i] += c);
        rows.push(r);
        rhs.push(v);
    };
    for i in 0..4 {
        let o = 4 * i;
        eq(vec![(o, 1.0)], ys[i]);
        eq(vec![(o, 1.0), (o + 1, 1.0), (o + 2, 1.0), (o + 3, 1.0)], ys[i + 1]);
    }
    for i in 0..3 {
        let (o, n) = (4 * i, 4 * (i + 1));
        eq(vec![(o + 1, 1.0), (o + 2, 2.0), (o + 3, 3.0), (n + 1, -1.0)], 0.0);
        eq(vec![(o + 2, 2.0), (o + 3, 6.0), (n + 2, -2.0)], 0.0);
    }
    eq(vec![(2, 2.0)], 0.0);
    eq(vec![(14, 2.0), (15, 6.0)], 0.0);
    let c = dense_solve(rows, rhs);
    let u = 0.5;
    let oracle = c[4] + c[5] * u + c[6] * u * u + c[7] * u * u * u;

    let s = NaturalCubicSpline::new(xs.to_vec(), ys.to_vec()).unwrap();
    assert!((s.eval(1.5) - oracle).abs() < 1e-12);
    assert!((s.eval(1.5) - 0.977_901_785_714_285_6).abs() < 1e-12, "{}", s.eval(1.5));
}

#[test]
fn rank_one_completion() {
    let x = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 0.0]]).unwrap();
    let lambdas: Vec<f64> = (0..12).map(|i| 0.5 * 0.3f64.powi(i)).collect();
    let cfg = SoftImputeConfig { rank_cap: Some(1), holdout_fraction: 0.0, max_iter: 20_000, tol: 1e-12, ..SoftImputeConfig::new(lambdas) };
    let out = soft_impute(&x, &[true, true, true, false], &cfg).unwrap();
    assert!((out.completed[(1, 1)] - 4.0).abs() < 1e-3, "{}", out.completed[(1, 1)]);
}

fn gru_from_blocks(input: usize, hidden: usize, seed: u64) -> GruParams {
    let mut plan = Vec::new();
    for g in ["z", "r", "h"] {
        plan.push(BlockPlan::matrix(format!("w_{g}"), hidden, input));
        plan.push(BlockPlan::matrix(format!("u_{g}"), hidden, hidden));
        plan.push(BlockPlan::bias(format!("b_{g}"), hidden));
    }
    let store = init_params(&plan, seed).unwrap();
    let mut p = GruParams::zeros(input, hidden);
    for (dst, b) in p.blocks_mut().into_iter().zip(store.blocks()) {
        dst.copy_from_slice(&b.values);
    }
    p
}

/// Row-major `rows x cols` times vector.
fn mv(w: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    w.chunks(cols).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn scripted_gru(b: [&[f64]; 9], hidden: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
    let input = x.len();
    let gate = |w: &[f64], u: &[f64], bias: &[f64], hh: &[f64]| -> Vec<f64> {
        let a = mv(w, input, x);
        let c = mv(u, hidden, hh);
        (0..hidden).map(|i| a[i] + c[i] + bias[i]).collect()
    };
    let z: Vec<f64> = gate(b[0], b[1], b[2], h).into_iter().map(sig).collect();
    let r: Vec<f64> = gate(b[3], b[4], b[5], h).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate(b[6], b[7], b[8], &rh).into_iter().map(f64::tanh).collect();
    (0..hidden).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
}

#[test]
fn gru_cell_matches_scripted_evaluation() {
    let p = gru_from_blocks(3, 2, 42);
    let x = [0.3, 0.7, 0.1];
    for h in [[0.0, 0.0], [0.4, -0.6]] {
        let got = gru_cell(&p, &x, &h).unwrap();
        let want = scripted_gru(p.blocks(), 2, &x, &h);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15, "{got:?} vs {want:?}");
        }
    }
}

fn block<'a>(m: &'a MrnnModel, name: &str) -> &'a [f64] {
    &m.params().block(name).unwrap().values
}

fn scripted_stack(m: &MrnnModel, dir: &str, inputs: &[[f64; 3]]) -> Vec<Vec<f64>> {
    let h = m.dims().hidden;
    let mut seq: Vec<Vec<f64>> = inputs.iter().map(|x| x.to_vec()).collect();
    for l in 0..m.dims().layers {
        let names = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];
        let b: Vec<&[f64]> = names.iter().map(|n| block(m, &format!("interp.{dir}.l{l}.{n}"))).collect();
        let b: [&[f64]; 9] = b.try_into().unwrap();
        let mut state = vec![0.0; h];
        seq = seq
            .iter()
            .map(|x| {
                state = scripted_gru(b, h, x, &state);
                state.clone()
            })
            .collect();
    }
    seq
}

#[test]
fn mrnn_forward_matches_scripted_recurrences() {
    let ts = vec![0, 1, 3, 4, 7];
    let values = vec![vec![0.2, 0.0, 0.9, 0.4, 0.0], vec![0.0, 0.5, 0.3, 0.0, 0.7]];
    let observed = vec![vec![true, false, true, true, false], vec![false, true, true, false, true]];
    let series = SegmentSeries::new(segment("a"), ts.clone(), values, observed.clone()).unwrap();
    let trip = build_triplet(&series);
    let scale = 0.05;
    let model = MrnnModel::new(MrnnDims::new(2), scale, 42).unwrap();
    let got = predict(&model, &trip).unwrap();

    let (len, h) = (ts.len(), 2);
    let mut xtilde = vec![vec![0.0; len]; 2];
    for d in 0..2 {
        let obs = &observed[d];
        let z: Vec<f64> = (0..len).map(|t| if obs[t] { series.values[d][t] } else { 0.0 }).collect();
        let m: Vec<f64> = obs.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
        // Minutes since the previous / until the next observation.
        let mut since = vec![0.0; len];
        let mut until = vec![0.0; len];
        for t in 1..len {
            let gap = (ts[t] - ts[t - 1]) as f64;
            since[t] = gap + if obs[t - 1] { 0.0 } else { since[t - 1] };
        }
        for t in (0..len - 1).rev() {
            let gap = (ts[t + 1] - ts[t]) as f64;
            until[t] = gap + if obs[t + 1] { 0.0 } else { until[t + 1] };
        }
        let fwd_in: Vec<[f64; 3]> = (0..len).map(|t| [z[t], m[t], since[t] * scale]).collect();
        let bwd_in: Vec<[f64; 3]> = (0..len).rev().map(|t| [z[t], m[t], until[t] * scale]).collect();
        let f = scripted_stack(&model, "fwd", &fwd_in);
        let b = scripted_stack(&model, "bwd", &bwd_in);
        let w = &block(&model, "interp.out.w")[d * 2 * h..(d + 1) * 2 * h];
        let bias = block(&model, "interp.out.b")[d];
        for t in 0..len {
            let hf = if t > 0 { f[t - 1].clone() } else { vec![0.0; h] };
            let hb = if t + 1 < len { b[len - 2 - t].clone() } else { vec![0.0; h] };
            let s: f64 = hf.iter().chain(&hb).zip(w).map(|(a, b)| a * b).sum();
            xtilde[d][t] = sig(s + bias);
        }
    }
    let w = block(&model, "impute.w");
    let bias = block(&model, "impute.b");
    for t in 0..len {
        let mut u = Vec::new();
        u.extend((0..2).map(|d| trip.z[d][t] * trip.m[d][t]));
        u.extend((0..2).map(|d| trip.m[d][t]));
        u.extend((0..2).map(|d| xtilde[d][t]));
        let a = mv(w, 6, &u);
        for d in 0..2 {
            assert!((got.xtilde[d][t] - xtilde[d][t]).abs() < 1e-14);
            assert!((got.xhat[d][t] - sig(a[d] + bias[d])).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_model_loss_is_closed_form() {
    let cohort = synthesize_cohort(&SynthSpec::new(8, 30, 0.05, 3)).unwrap();
    let params = fit_norm_params(&cohort).unwrap();
    let norm = normalize_with(&cohort, &params).unwrap();
    let trips: Vec<_> = norm.segments.iter().map(build_triplet).collect();
    let model = MrnnModel::new(MrnnDims::new(2), 1.0 / 30.0, 1).unwrap();
    let zero = model.with_flat(&vec![0.0; model.flatten().len()]).unwrap();
    let closed: f64 = norm
        .segments
        .iter()
        .map(|s| s.values.iter().flatten().map(|x| (0.5 - x) * (0.5 - x)).sum::<f64>() / 60.0)
        .sum();
    assert!((total_loss(&zero, &trips).unwrap() - closed).abs() < 1e-12);

    let cfg = TrainConfig { epochs: 200, seed: 5, ..TrainConfig::default() };
    let out = train(&norm, &cfg).unwrap();
    let init = out.trace[0].train_loss;
    let last = out.trace.last().unwrap().train_loss;
    assert!(last < init, "{last} !< {init}");
    let init_model = MrnnModel::new(MrnnDims::new(2), model.delta_scale(), 0).unwrap();
    assert!(total_loss(&out.model, &trips).unwrap() < total_loss(&init_model, &trips).unwrap());
}

fn sine_cohort(n: usize, len: usize) -> Cohort {
    let ts: Vec<i64> = (0..len as i64).collect();
    let segments = (0..n)
        .map(|i| {
            let phase = i as f64 * 0.37;
            let a: Vec<f64> = (0..len).map(|t| 0.5 + 0.4 * (t as f64 / 9.0 + phase).sin()).collect();
            let b: Vec<f64> = (0..len).map(|t| 0.5 + 0.3 * (t as f64 / 9.0 + phase).cos()).collect();
            SegmentSeries::complete(segment(&format!("s{i}")), ts.clone(), vec![a, b]).unwrap()
        })
        .collect();
    Cohort::new(segments, vec!["a".into(), "b".into()], None).unwrap()
}

#[test]
fn trained_model_beats_constant_imputer_on_sines() {
    let (masked, ledger) = apply_mask(&sine_cohort(20, 85), &MaskSpec::bernoulli(0.2, 11).unwrap()).unwrap();
    let params = fit_norm_params(&masked).unwrap();
    let norm = normalize_with(&masked, &params).unwrap();
    let ledger = ledger.normalized(&params).unwrap();
    let out = train(&norm, &TrainConfig { epochs: 150, seed: 2, ..TrainConfig::default() }).unwrap();
    let model_rmse = rmse(&impute(&out.model, &norm).unwrap(), &ledger).unwrap();
    let constant = (ledger.entries().iter().map(|e| (e.value - 0.5).powi(2)).sum::<f64>() / ledger.len() as f64).sqrt();
    assert!(model_rmse < constant, "{model_rmse} !< {constant}");
}

#[test]
fn synthetic_streams_are_anticorrelated() {
    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }
    let c = synthesize_cohort(&SynthSpec::new(50, 85, 0.05, 0)).unwrap();
    for s in &c.segments {
        let r = pearson(&s.values[0], &s.values[1]);
        assert!(r < -0.8, "{}: {r}", s.segment.id);
    }
}

#[test]
fn masked_fraction_at_table_sizes() {
    let c = synthesize_cohort(&SynthSpec::new(382, 85, 0.05, 0)).unwrap();
    let total = 382 * 2 * 85;
    assert_eq!(total, 64_940);
    for seed in 0..5 {
        let (masked, ledger) = apply_mask(&c, &MaskSpec::bernoulli(0.2, seed).unwrap()).unwrap();
        let frac = ledger.len() as f64 / total as f64;
        assert!((0.19..=0.21).contains(&frac), "{frac}");
        assert_eq!(masked.observed_count(), total - ledger.len());
    }
}

#[test]
fn select_cohort_matches_exhaustive_search() {
    let ids = ["a", "b", "c"];
    let ranges = [1..=10, 1..=10, 6..=10];
    let segs: Vec<_> = ids.iter().map(|id| segment(id)).collect();
    let records: Vec<_> = ids
        .iter()
        .zip(ranges.clone())
        .flat_map(|(id, r)| r.map(move |t| RawRecord::new(*id, t, 50.0, 60.0, 100.0).unwrap()))
        .collect();

    // Largest subset whose common minutes contain a run of at least 10.
    let mut best: Option<(usize, usize)> = None;
    for mask in 1u32..8 {
        let members: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
        let common: Vec<i64> = (1..=10).filter(|t| members.iter().all(|&i| ranges[i].contains(t))).collect();
        let run = common.windows(2).fold((common.len().min(1), common.len().min(1)), |(cur, best), w| {
            let cur = if w[1] == w[0] + 1 { cur + 1 } else { 1 };
            (cur, best.max(cur))
        });
        if run.1 >= 10 && best.is_none_or(|(n, _)| members.len() > n) {
            best = Some((members.len(), run.1));
        }
    }
    let (n, len) = best.unwrap();
    let c = select_cohort(&records, &segs, 10).unwrap();
    assert_eq!((c.n_segments(), c.len()), (n, len));
    assert_eq!((n, len), (2, 10));
    let got: Vec<&str> = c.segments.iter().map(|s| s.segment.id.as_str()).collect();
    assert_eq!(got, ["a", "b"]);
}
