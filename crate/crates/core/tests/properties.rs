use gapfill_core::baselines::{soft_impute, spline_impute, svd, SoftImputeConfig};
use gapfill_core::data::{
    denormalize, fit_norm_params, normalize, select_cohort, synthesize_cohort, Cohort, GeoPoint, RawRecord,
    RoadSegment, SegmentSeries, SynthSpec,
};
use gapfill_core::masking::{apply_mask, build_triplet, GroundTruthLedger, MaskSpec};
use gapfill_core::metrics::{eta, rmse, training_loss, FoldPlan};
use gapfill_core::mrnn::{predict, total_loss, MrnnDims, MrnnModel};
use gapfill_core::nncore::{GruParams, GruSequence, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn segment(i: usize) -> RoadSegment {
    RoadSegment::new(format!("s{i}"), GeoPoint { lat: 1.0, lon: 2.0 }, GeoPoint { lat: 1.0, lon: 2.01 }, 1.0).unwrap()
}

fn small_cohort(n: usize, len: usize, seed: u64) -> Cohort {
    synthesize_cohort(&SynthSpec::new(n, len, 0.05, seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalize_roundtrip(n in 1usize..6, len in 3usize..20, seed in any::<u64>(), tau in 0.0f64..0.6) {
        let (masked, _) = apply_mask(&small_cohort(n, len, seed), &MaskSpec::bernoulli(tau, seed ^ 1).unwrap()).unwrap();
        prop_assume!(fit_norm_params(&masked).is_ok());
        let back = denormalize(&normalize(&masked).unwrap()).unwrap();
        for (a, b) in back.segments.iter().zip(&masked.segments) {
            prop_assert_eq!(&a.observed, &b.observed);
            for d in 0..2 {
                for t in 0..len {
                    if b.observed[d][t] {
                        prop_assert!((a.values[d][t] - b.values[d][t]).abs() <= 1e-12 * b.values[d][t].abs().max(1.0));
                    }
                }
            }
        }
        let norm = normalize(&masked).unwrap();
        let again = normalize(&denormalize(&norm).unwrap()).unwrap();
        for (a, b) in again.segments.iter().zip(&norm.segments) {
            for d in 0..2 {
                for t in 0..len {
                    if b.observed[d][t] {
                        prop_assert!((a.values[d][t] - b.values[d][t]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn selected_pairs_exist_in_records(
        spans in prop::collection::vec((0i64..20, 1i64..25), 1..5),
        gaps in prop::collection::vec(0i64..40, 0..6),
        min_length in 1usize..8,
    ) {
        let segs: Vec<_> = (0..spans.len()).map(segment).collect();
        let records: Vec<RawRecord> = spans
            .iter()
            .enumerate()
            .flat_map(|(i, &(start, len))| {
                let gaps = &gaps;
                (start..start + len)
                    .filter(move |t| !gaps.contains(t) || i % 2 == 0)
                    .map(move |t| RawRecord::new(format!("s{i}"), t, 40.0 + t as f64, 90.0, 99.0).unwrap())
            })
            .collect();
        if let Ok(c) = select_cohort(&records, &segs, min_length) {
            prop_assert!(c.len() >= min_length);
            for s in &c.segments {
                for (t, &ts) in s.timestamps.iter().enumerate() {
                    let hit = records.iter().find(|r| r.segment_id == s.segment.id && r.timestamp == ts);
                    prop_assert!(hit.is_some());
                    prop_assert_eq!(hit.unwrap().speed_kmh, s.values[0][t]);
                }
            }
        }
    }

    #[test]
    fn mask_ledger_is_the_missing_set(n in 1usize..5, len in 2usize..15, seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let c = small_cohort(n, len, seed);
        let spec = MaskSpec::bernoulli(tau, seed.wrapping_add(9)).unwrap();
        let (masked, ledger) = apply_mask(&c, &spec).unwrap();
        let mut missing = Vec::new();
        for (i, s) in masked.segments.iter().enumerate() {
            for d in 0..2 {
                for t in 0..len {
                    if s.observed[d][t] {
                        prop_assert_eq!(s.values[d][t].to_bits(), c.segments[i].values[d][t].to_bits());
                    } else {
                        missing.push((i, d, t));
                    }
                }
            }
        }
        let mut coords: Vec<_> = ledger.entries().iter().map(|e| (e.segment, e.stream, e.time)).collect();
        coords.sort_unstable();
        prop_assert_eq!(coords, missing);
        for e in ledger.entries() {
            prop_assert_eq!(e.value, c.segments[e.segment].values[e.stream][e.time]);
        }
        prop_assert_eq!(apply_mask(&c, &spec).unwrap(), (masked, ledger));
    }

    #[test]
    fn complete_triplet_has_unit_mask_and_gaps(steps in prop::collection::vec(1i64..5, 1..12)) {
        let mut ts = vec![100];
        steps.iter().for_each(|s| ts.push(ts.last().unwrap() + s));
        let vals = vec![ts.iter().map(|&t| t as f64).collect::<Vec<_>>()];
        let s = SegmentSeries::complete(segment(0), ts.clone(), vals).unwrap();
        let trip = build_triplet(&s);
        prop_assert!(trip.m[0].iter().all(|&m| m == 1.0));
        let mut expect = vec![0.0];
        expect.extend(ts.windows(2).map(|w| (w[1] - w[0]) as f64));
        prop_assert_eq!(&trip.delta[0], &expect);
    }

    #[test]
    fn gru_state_stays_in_open_unit_ball(seed in any::<u64>(), len in 1usize..30, scale in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GruParams::zeros(3, 4);
        for b in p.blocks_mut() {
            b.iter_mut().for_each(|v| *v = scale * (rng.random::<f64>() * 2.0 - 1.0));
        }
        let xs: Vec<Vec<f64>> = (0..len).map(|_| (0..3).map(|_| scale * (rng.random::<f64>() - 0.5)).collect()).collect();
        let seq = GruSequence::run(&p, xs.iter().map(Vec::as_slice));
        for h in seq.outputs() {
            prop_assert!(h.iter().all(|v| v.abs() < 1.0), "{:?}", h);
        }
    }

    #[test]
    fn spline_recovers_affine_streams(a in -5.0f64..5.0, b in -2.0f64..2.0, len in 2usize..60, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<i64> = (0..len as i64).map(|t| 1000 + 2 * t).collect();
        let mut observed: Vec<bool> = (0..len).map(|_| rng.random::<f64>() >= 0.3).collect();
        let (i, j) = (rng.random_range(0..len), rng.random_range(0..len - 1));
        observed[i] = true;
        observed[if j >= i { j + 1 } else { j }] = true;
        let truth: Vec<f64> = ts.iter().map(|&t| a + b * (t - 1000) as f64).collect();
        let vals = truth.iter().zip(&observed).map(|(&v, &o)| if o { v } else { 0.0 }).collect();
        let s = SegmentSeries::new(segment(0), ts, vec![vals], vec![observed.clone()]).unwrap();
        let out = spline_impute(&s);
        for t in 0..len {
            prop_assert!((out.values[0][t] - truth[t]).abs() < 1e-9);
            if observed[t] {
                prop_assert_eq!(out.values[0][t], truth[t]);
            }
        }
    }

    #[test]
    fn rmse_ignores_ledger_order(seed in any::<u64>()) {
        let c = small_cohort(3, 10, seed);
        let (masked, ledger) = apply_mask(&c, &MaskSpec::bernoulli(0.4, seed).unwrap()).unwrap();
        prop_assume!(!ledger.is_empty());
        let filled = spline_impute_all(&masked);
        let mut entries = ledger.entries().to_vec();
        let base = rmse(&filled, &ledger).unwrap();
        entries.reverse();
        let k = (seed as usize) % entries.len();
        entries.rotate_left(k);
        let permuted = GroundTruthLedger::new(entries).unwrap();
        prop_assert!((rmse(&filled, &permuted).unwrap() - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn fold_plan_partitions(n in 1usize..400, k in 1usize..12, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let plan = FoldPlan::new(n, k, seed).unwrap();
        let mut seen = vec![0u32; n];
        let mut total = 0;
        for f in 0..k {
            let fold = plan.fold(f);
            total += fold.len();
            fold.iter().for_each(|&i| seen[i] += 1);
            prop_assert_eq!(fold.len() + plan.complement(f).len(), n);
        }
        prop_assert_eq!(total, n);
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn eta_of_equal_rmse_is_zero(a in 1e-6f64..10.0) {
        prop_assert_eq!(eta(a, a).unwrap(), 0.0);
    }

    #[test]
    fn full_observation_loss_is_squared_rmse(vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..30)) {
        let len = vals.len();
        let truth: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let est: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let loss = training_loss(&[vec![est.clone()]], &[vec![truth.clone()]], &[vec![vec![1.0; len]]]).unwrap();
        let ts: Vec<i64> = (0..len as i64).collect();
        let seg = SegmentSeries::complete(segment(0), ts, vec![est]).unwrap();
        let cohort = Cohort::new(vec![seg], vec!["x".into()], None).unwrap();
        let ledger = GroundTruthLedger::new(
            truth.iter().enumerate().map(|(t, &v)| gapfill_core::masking::LedgerEntry { segment: 0, stream: 0, time: t, value: v }).collect(),
        ).unwrap();
        prop_assert!((loss.sqrt() - rmse(&cohort, &ledger).unwrap()).abs() < 1e-12);
    }
}

fn spline_impute_all(c: &Cohort) -> Cohort {
    let mut out = c.clone();
    out.segments.iter_mut().for_each(|s| *s = spline_impute(s));
    out
}

fn low_rank_instance(seed: u64, rows: usize, cols: usize, rank: usize, missing: f64) -> (Matrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || rng.random::<f64>() * 2.0 - 1.0;
    let u: Vec<f64> = (0..rows * rank).map(|_| gauss()).collect();
    let v: Vec<f64> = (0..rank * cols).map(|_| gauss()).collect();
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = (0..rank).map(|k| u[i * rank + k] * v[k * cols + j]).sum();
        }
    }
    let mask = (0..rows * cols).map(|_| rng.random::<f64>() >= missing).collect();
    (m, mask)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn soft_impute_objective_never_increases(seed in any::<u64>()) {
        let (m, mask) = low_rank_instance(seed, 12, 15, 3, 0.3);
        prop_assume!(mask.iter().any(|&o| o));
        let cfg = SoftImputeConfig { seed, ..SoftImputeConfig::for_matrix(&m, &mask).unwrap() };
        let out = soft_impute(&m, &mask, &cfg).unwrap();
        for stage in &out.stages {
            for w in stage.objective.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-10) + 1e-12, "lambda {}: {} -> {}", stage.lambda, w[0], w[1]);
            }
        }
        for (i, &o) in mask.iter().enumerate() {
            if o {
                prop_assert_eq!(out.completed.as_slice()[i], m.as_slice()[i]);
            }
        }
    }

    #[test]
    fn soft_impute_rank_respects_cap(seed in any::<u64>(), cap in 1usize..5) {
        let (m, mask) = low_rank_instance(seed, 10, 8, 4, 0.3);
        prop_assume!(mask.iter().any(|&o| o));
        let cfg = SoftImputeConfig { rank_cap: Some(cap), seed, ..SoftImputeConfig::for_matrix(&m, &mask).unwrap() };
        let out = soft_impute(&m, &mask, &cfg).unwrap();
        let s = svd(&out.low_rank).unwrap().s;
        let rank = s.iter().filter(|&&v| v > 1e-10 * s[0].max(1.0)).count();
        prop_assert!(rank <= cap, "rank {rank} > cap {cap}: {s:?}");
    }

    #[test]
    fn own_value_never_reaches_own_estimate(seed in any::<u64>(), len in 2usize..10, bump in -3.0f64..3.0) {
        let c = small_cohort(1, len, seed);
        let (masked, _) = apply_mask(&c, &MaskSpec::bernoulli(0.3, seed).unwrap()).unwrap();
        prop_assume!(fit_norm_params(&masked).is_ok());
        let trip = build_triplet(&normalize(&masked).unwrap().segments[0]);
        let model = MrnnModel::new(MrnnDims::new(2), 0.1, seed).unwrap();
        let base = predict(&model, &trip).unwrap().xhat;
        let (d, t) = ((seed % 2) as usize, (seed as usize / 2) % len);
        let mut moved = trip.clone();
        moved.z[d][t] += bump;
        prop_assert_eq!(predict(&model, &moved).unwrap().xhat[d][t], base[d][t]);
    }

    #[test]
    fn loss_ignores_segment_order(seed in any::<u64>(), k in 0usize..4) {
        let c = small_cohort(5, 8, seed);
        let (masked, _) = apply_mask(&c, &MaskSpec::bernoulli(0.2, seed).unwrap()).unwrap();
        prop_assume!(fit_norm_params(&masked).is_ok());
        let mut trips: Vec<_> = normalize(&masked).unwrap().segments.iter().map(build_triplet).collect();
        let model = MrnnModel::new(MrnnDims::new(2), 0.1, seed).unwrap();
        let a = total_loss(&model, &trips).unwrap();
        trips.rotate_left(k);
        trips.swap(0, 4);
        let b = total_loss(&model, &trips).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn noiseless_synthesis_is_reciprocal(n in 1usize..6, len in 1usize..40, seed in any::<u64>()) {
        let c = synthesize_cohort(&SynthSpec::new(n, len, 0.0, seed)).unwrap();
        for s in &c.segments {
            for t in 0..len {
                let expect = 3600.0 * s.segment.length_km / s.values[0][t];
                prop_assert!((s.values[1][t] - expect).abs() <= 1e-9 * expect);
            }
        }
    }
}
