//! Road segments, measurement series and experiment cohorts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Label of the speed stream, in km/h.
pub const SPEED_STREAM: &str = "speed_kmh";
/// Label of the travel-time stream, in seconds.
pub const TRAVEL_TIME_STREAM: &str = "travel_time_s";

/// Minute index of 2017-09-08 16:30 EDT; synthetic grids start here.
pub const SYNTH_EPOCH_MIN: i64 = 25_081_710;

/// Free-flow speed of synthetic segments, km/h.
const FREE_FLOW_KMH: f64 = 100.0;
/// Floor for synthetic congested speed, km/h.
const MIN_SPEED_KMH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidArgument(format!(
                "coordinate ({lat}, {lon}) outside [-90, 90] x [-180, 180]"
            )));
        }
        Ok(Self { lat, lon })
    }
}

/// A road segment, identified by its start and end coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub id: String,
    pub start: GeoPoint,
    pub end: GeoPoint,
    pub length_km: f64,
}

impl RoadSegment {
    pub fn new(id: impl Into<String>, start: GeoPoint, end: GeoPoint, length_km: f64) -> Result<Self> {
        let id = id.into();
        if !(length_km.is_finite() && length_km > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "segment `{id}`: length {length_km} km must be positive"
            )));
        }
        GeoPoint::new(start.lat, start.lon)?;
        GeoPoint::new(end.lat, end.lon)?;
        Ok(Self { id, start, end, length_km })
    }
}

/// One per-minute measurement of a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub segment_id: String,
    /// Minutes since the UNIX epoch.
    pub timestamp: i64,
    pub speed_kmh: f64,
    pub travel_time_s: f64,
    /// Record quality in percent.
    pub confidence: f64,
}

impl RawRecord {
    pub fn new(
        segment_id: impl Into<String>,
        timestamp: i64,
        speed_kmh: f64,
        travel_time_s: f64,
        confidence: f64,
    ) -> Result<Self> {
        for (name, v) in [("speed", speed_kmh), ("travel time", travel_time_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} {v} must be finite and >= 0")));
            }
        }
        if !(0.0..=100.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!("confidence {confidence} outside [0, 100]")));
        }
        Ok(Self {
            segment_id: segment_id.into(),
            timestamp,
            speed_kmh,
            travel_time_s,
            confidence,
        })
    }
}

/// Measurements of one segment: a `D x L` grid over ascending timestamps.
///
/// `values[d][t]` is meaningful only where `observed[d][t]` is set; the
/// masking code writes `0.0` at missing coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSeries {
    pub segment: RoadSegment,
    pub timestamps: Vec<i64>,
    pub values: Vec<Vec<f64>>,
    pub observed: Vec<Vec<bool>>,
}

impl SegmentSeries {
    pub fn new(
        segment: RoadSegment,
        timestamps: Vec<i64>,
        values: Vec<Vec<f64>>,
        observed: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let s = Self { segment, timestamps, values, observed };
        s.validate()?;
        Ok(s)
    }

    /// A fully observed series.
    pub fn complete(segment: RoadSegment, timestamps: Vec<i64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let observed = values.iter().map(|row| vec![true; row.len()]).collect();
        Self::new(segment, timestamps, values, observed)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.segment.id;
        let len = self.timestamps.len();
        if len == 0 || self.values.is_empty() {
            return Err(Error::Shape(format!("segment `{id}` has an empty grid")));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "segment `{id}`: timestamps are not strictly ascending"
            )));
        }
        if self.observed.len() != self.values.len() {
            return Err(Error::Shape(format!("segment `{id}`: values and observed stream counts differ")));
        }
        for (vals, obs) in self.values.iter().zip(&self.observed) {
            if vals.len() != len || obs.len() != len {
                return Err(Error::Shape(format!("segment `{id}`: stream length differs from {len} timestamps")));
            }
            if vals.iter().zip(obs).any(|(v, &o)| o && !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("segment `{id}`: non-finite observed value")));
            }
        }
        Ok(())
    }

    pub fn n_streams(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().flatten().filter(|&&o| o).count()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().flatten().all(|&o| o)
    }

    /// Keeps only the first `len` grid points.
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            segment: self.segment.clone(),
            timestamps: self.timestamps[..len].to_vec(),
            values: self.values.iter().map(|r| r[..len].to_vec()).collect(),
            observed: self.observed.iter().map(|r| r[..len].to_vec()).collect(),
        }
    }
}

/// Min-max parameters of one stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormParams {
    pub min: f64,
    pub max: f64,
}

impl NormParams {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }
}

/// `N` segments sharing one timestamp grid and stream layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub segments: Vec<SegmentSeries>,
    pub stream_names: Vec<String>,
    pub norm_params: Option<Vec<NormParams>>,
}

impl Cohort {
    pub fn new(
        segments: Vec<SegmentSeries>,
        stream_names: Vec<String>,
        norm_params: Option<Vec<NormParams>>,
    ) -> Result<Self> {
        let c = Self { segments, stream_names, norm_params };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.segments.first() else {
            return Err(Error::InvalidArgument("a cohort needs at least one segment".to_string()));
        };
        if self.stream_names.len() != first.n_streams() {
            return Err(Error::Shape(format!(
                "{} stream names for {} streams",
                self.stream_names.len(),
                first.n_streams()
            )));
        }
        for s in &self.segments {
            s.validate()?;
            if s.timestamps != first.timestamps || s.n_streams() != first.n_streams() {
                return Err(Error::Shape(format!(
                    "segment `{}` does not share the cohort grid",
                    s.segment.id
                )));
            }
        }
        if let Some(params) = &self.norm_params {
            if params.len() != self.stream_names.len() {
                return Err(Error::Shape("one normalization pair is needed per stream".to_string()));
            }
        }
        Ok(())
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn n_streams(&self) -> usize {
        self.stream_names.len()
    }

    pub fn len(&self) -> usize {
        self.segments.first().map_or(0, SegmentSeries::len)
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        self.segments.first().map_or(&[], |s| &s.timestamps)
    }

    pub fn is_complete(&self) -> bool {
        self.segments.iter().all(SegmentSeries::is_complete)
    }

    pub fn observed_count(&self) -> usize {
        self.segments.iter().map(SegmentSeries::observed_count).sum()
    }

    /// Sub-cohort over the given segment indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let segments = indices
            .iter()
            .map(|&i| {
                self.segments
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("segment index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments, self.stream_names.clone(), self.norm_params.clone())
    }

    /// Keeps the first `len` grid points of every segment.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a length-{} grid to {len}",
                self.len()
            )));
        }
        Ok(Self {
            segments: self.segments.iter().map(|s| s.truncated(len)).collect(),
            stream_names: self.stream_names.clone(),
            norm_params: self.norm_params.clone(),
        })
    }
}

/// Picks the experiment cohort: the largest set of segments that are
/// jointly recorded over at least `min_length` consecutive minutes.
///
/// Ties between equally large sets prefer the longer shared grid, then the
/// lexicographically smaller sorted id list. The grid is the longest
/// contiguous run of minutes at which every member has a record. Duplicate
/// (segment, minute) records keep the first occurrence; records of segments
/// missing from `segments` are ignored.
pub fn select_cohort(records: &[RawRecord], segments: &[RoadSegment], min_length: usize) -> Result<Cohort> {
    if min_length == 0 {
        return Err(Error::InvalidArgument("min_length must be at least 1".to_string()));
    }
    let index: BTreeMap<&str, usize> = segments.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut by_segment: Vec<BTreeMap<i64, (f64, f64)>> = vec![BTreeMap::new(); segments.len()];
    for r in records {
        if let Some(&i) = index.get(r.segment_id.as_str()) {
            by_segment[i].entry(r.timestamp).or_insert((r.speed_kmh, r.travel_time_s));
        }
    }
    let runs: Vec<Vec<(i64, i64)>> = by_segment.iter().map(|m| contiguous_runs(m.keys().copied())).collect();
    let span = min_length as i64 - 1;

    // A set is feasible iff some window of `min_length` consecutive minutes
    // is covered by every member; maximal sets are "all segments covering a
    // window", and the window can start at some member's run start.
    let mut candidates: BTreeSet<Vec<usize>> = BTreeSet::new();
    for seg_runs in &runs {
        for &(start, end) in seg_runs {
            if end - start < span {
                continue;
            }
            let members: Vec<usize> = runs
                .iter()
                .enumerate()
                .filter(|(_, rs)| rs.iter().any(|&(s, e)| s <= start && e >= start + span))
                .map(|(i, _)| i)
                .collect();
            candidates.insert(members);
        }
    }

    let mut best: Option<(Vec<usize>, Vec<i64>, Vec<&str>)> = None;
    for members in candidates {
        let grid = shared_grid(&members, &by_segment);
        let mut ids: Vec<&str> = members.iter().map(|&i| segments[i].id.as_str()).collect();
        ids.sort_unstable();
        let better = match &best {
            None => true,
            Some((bm, bg, bids)) => {
                (members.len(), grid.len()) > (bm.len(), bg.len())
                    || ((members.len(), grid.len()) == (bm.len(), bg.len()) && ids < *bids)
            }
        };
        if better {
            best = Some((members, grid, ids));
        }
    }
    let Some((mut members, grid, _)) = best else {
        return Err(Error::EmptyCohort { min_length });
    };

    members.sort_by(|&a, &b| segments[a].id.cmp(&segments[b].id));
    let series = members
        .iter()
        .map(|&i| {
            let recs = &by_segment[i];
            let speed = grid.iter().map(|t| recs[t].0).collect();
            let travel = grid.iter().map(|t| recs[t].1).collect();
            SegmentSeries::complete(segments[i].clone(), grid.clone(), vec![speed, travel])
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(series, vec![SPEED_STREAM.to_string(), TRAVEL_TIME_STREAM.to_string()], None)
}

fn contiguous_runs(sorted: impl Iterator<Item = i64>) -> Vec<(i64, i64)> {
    let mut runs: Vec<(i64, i64)> = Vec::new();
    for t in sorted {
        match runs.last_mut() {
            Some((_, end)) if *end + 1 == t => *end = t,
            _ => runs.push((t, t)),
        }
    }
    runs
}

/// Longest contiguous run of the members' common minutes (earliest on ties).
fn shared_grid(members: &[usize], by_segment: &[BTreeMap<i64, (f64, f64)>]) -> Vec<i64> {
    let Some((&first, rest)) = members.split_first() else {
        return Vec::new();
    };
    let common = by_segment[first]
        .keys()
        .copied()
        .filter(|t| rest.iter().all(|&i| by_segment[i].contains_key(t)));
    let (start, end) = contiguous_runs(common)
        .into_iter()
        .fold(None, |best: Option<(i64, i64)>, run| match best {
            Some(b) if b.1 - b.0 >= run.1 - run.0 => Some(b),
            _ => Some(run),
        })
        .unwrap_or((0, -1));
    (start..=end).collect()
}

/// Parameters of [`synthesize_cohort`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_segments: usize,
    /// 1 (speed only) or 2 (speed and travel time).
    pub n_streams: usize,
    pub length: usize,
    /// Standard deviation of the multiplicative noise on each stream.
    pub noise_sd: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_segments: usize, length: usize, noise_sd: f64, seed: u64) -> Self {
        Self { n_segments, n_streams: 2, length, noise_sd, seed }
    }
}

/// Builds a complete synthetic congestion cohort.
///
/// Each segment runs at free-flow speed except for one bell-shaped speed
/// trough whose depth, center and width drift smoothly with the segment
/// index, so neighbouring segments congest alike. Travel time is the exact
/// reciprocal `3600 * length_km / speed`; independent multiplicative noise is
/// applied to both streams afterwards.
pub fn synthesize_cohort(spec: &SynthSpec) -> Result<Cohort> {
    let SynthSpec { n_segments, n_streams, length, noise_sd, seed } = *spec;
    if n_segments == 0 || length == 0 {
        return Err(Error::InvalidArgument("n_segments and length must be at least 1".to_string()));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_sd {noise_sd} must be >= 0")));
    }
    if !(1..=2).contains(&n_streams) {
        return Err(Error::InvalidArgument(format!(
            "synthetic cohorts carry 1 or 2 streams, not {n_streams}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 3] = core::array::from_fn(|_| rng.random::<f64>() * 2.0 * PI);
    let l = length as f64;
    let timestamps: Vec<i64> = (0..length as i64).map(|t| SYNTH_EPOCH_MIN + t).collect();

    let mut segments = Vec::with_capacity(n_segments);
    for n in 0..n_segments {
        let s = n as f64;
        let depth = 60.0 + 20.0 * libm::sin(2.0 * PI * s / 37.0 + phase[0]);
        let center = (0.5 + 0.2 * libm::sin(2.0 * PI * s / 53.0 + phase[1])) * (l - 1.0);
        let width = l * (0.15 + 0.05 * libm::sin(2.0 * PI * s / 29.0 + phase[2]));
        let length_km = 0.8 + 0.4 * rng.random::<f64>();

        let start = GeoPoint::new(43.60 + 0.002 * s, -79.60 + 0.001 * s)?;
        let end = GeoPoint::new(start.lat, start.lon + length_km / 80.5)?;
        let segment = RoadSegment::new(format!("seg{n:04}"), start, end, length_km)?;

        let mut speed = Vec::with_capacity(length);
        let mut travel = Vec::with_capacity(length);
        for t in 0..length {
            let dt = t as f64 - center;
            let clean = (FREE_FLOW_KMH - depth * libm::exp(-dt * dt / (2.0 * width * width))).max(MIN_SPEED_KMH);
            let clean_tt = 3600.0 * length_km / clean;
            let e_speed: f64 = rng.sample(StandardNormal);
            let e_travel: f64 = rng.sample(StandardNormal);
            speed.push(clean * (1.0 + noise_sd * e_speed).max(0.0));
            travel.push(clean_tt * (1.0 + noise_sd * e_travel).max(0.0));
        }
        let values = if n_streams == 2 { vec![speed, travel] } else { vec![speed] };
        segments.push(SegmentSeries::complete(segment, timestamps.clone(), values)?);
    }
    let names = [SPEED_STREAM, TRAVEL_TIME_STREAM][..n_streams].iter().map(|s| s.to_string()).collect();
    Cohort::new(segments, names, None)
}

/// Fits per-stream min-max parameters over observed entries.
pub fn fit_norm_params(cohort: &Cohort) -> Result<Vec<NormParams>> {
    (0..cohort.n_streams())
        .map(|d| {
            let (min, max) = cohort
                .segments
                .iter()
                .flat_map(|s| s.values[d].iter().zip(&s.observed[d]).filter(|(_, &o)| o).map(|(&v, _)| v))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !(max > min) {
                return Err(Error::DegenerateStream(cohort.stream_names[d].clone()));
            }
            Ok(NormParams { min, max })
        })
        .collect()
}

/// Min-max normalizes every observed value to `[0, 1]`, per stream.
pub fn normalize(cohort: &Cohort) -> Result<Cohort> {
    if cohort.norm_params.is_some() {
        return Err(Error::Precondition("cohort is already normalized".to_string()));
    }
    let params = fit_norm_params(cohort)?;
    normalize_with(cohort, &params)
}

/// Normalizes with externally fitted parameters (e.g. fitted on training
/// observations only). Values may then fall outside `[0, 1]`.
pub fn normalize_with(cohort: &Cohort, params: &[NormParams]) -> Result<Cohort> {
    if cohort.norm_params.is_some() {
        return Err(Error::Precondition("cohort is already normalized".to_string()));
    }
    if params.len() != cohort.n_streams() {
        return Err(Error::Shape(format!("{} normalization pairs for {} streams", params.len(), cohort.n_streams())));
    }
    if let Some(d) = params.iter().position(|p| !(p.max > p.min)) {
        return Err(Error::DegenerateStream(cohort.stream_names[d].clone()));
    }
    let mut out = map_observed(cohort, |d, v| params[d].apply(v));
    out.norm_params = Some(params.to_vec());
    Ok(out)
}

/// Inverts [`normalize`] and clears the stored parameters.
pub fn denormalize(cohort: &Cohort) -> Result<Cohort> {
    let Some(params) = &cohort.norm_params else {
        return Err(Error::Precondition("cohort is not normalized".to_string()));
    };
    let mut out = map_observed(cohort, |d, v| params[d].invert(v));
    out.norm_params = None;
    Ok(out)
}

fn map_observed(cohort: &Cohort, f: impl Fn(usize, f64) -> f64) -> Cohort {
    let mut out = cohort.clone();
    for s in &mut out.segments {
        for (d, (vals, obs)) in s.values.iter_mut().zip(&s.observed).enumerate() {
            for (v, _) in vals.iter_mut().zip(obs).filter(|(_, &o)| o) {
                *v = f(d, *v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: &str) -> RoadSegment {
        RoadSegment::new(id, GeoPoint { lat: 43.6, lon: -79.4 }, GeoPoint { lat: 43.61, lon: -79.4 }, 1.0).unwrap()
    }

    fn records(id: &str, times: impl Iterator<Item = i64>) -> Vec<RawRecord> {
        times
            .map(|t| RawRecord::new(id, t, 50.0 + t as f64, 72.0, 99.0).unwrap())
            .collect()
    }

    #[test]
    fn rejects_invalid_segments_and_records() {
        let p = GeoPoint { lat: 0.0, lon: 0.0 };
        assert!(RoadSegment::new("a", p, p, 0.0).is_err());
        assert!(RoadSegment::new("a", GeoPoint { lat: 91.0, lon: 0.0 }, p, 1.0).is_err());
        assert!(RawRecord::new("a", 0, -1.0, 1.0, 50.0).is_err());
        assert!(RawRecord::new("a", 0, 1.0, f64::NAN, 50.0).is_err());
        assert!(RawRecord::new("a", 0, 1.0, 1.0, 100.5).is_err());
    }

    #[test]
    fn series_rejects_unsorted_timestamps() {
        let r = SegmentSeries::complete(seg("a"), vec![1, 1], vec![vec![0.0, 0.0]]);
        assert!(r.is_err());
    }

    #[test]
    fn select_prefers_larger_set() {
        let mut recs = records("a", 1..=10);
        recs.extend(records("b", 1..=10));
        recs.extend(records("c", 6..=10));
        let segs = [seg("a"), seg("b"), seg("c")];
        let c = select_cohort(&recs, &segs, 10).unwrap();
        assert_eq!(c.n_segments(), 2);
        assert_eq!(c.len(), 10);
        let ids: Vec<_> = c.segments.iter().map(|s| s.segment.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);

        // with a shorter bound all three share minutes 6..=10
        let c = select_cohort(&recs, &segs, 5).unwrap();
        assert_eq!(c.n_segments(), 3);
        assert_eq!(c.timestamps(), &[6, 7, 8, 9, 10]);
    }

    #[test]
    fn select_singleton_and_infeasible() {
        let recs = records("a", [3, 4, 5, 9].into_iter());
        let c = select_cohort(&recs, &[seg("a")], 1).unwrap();
        assert_eq!(c.timestamps(), &[3, 4, 5]);
        assert_eq!(c.segments[0].values[0], vec![53.0, 54.0, 55.0]);
        assert_eq!(
            select_cohort(&recs, &[seg("a")], 5),
            Err(Error::EmptyCohort { min_length: 5 })
        );
    }

    #[test]
    fn select_ties_break_on_length_then_ids() {
        // {a,b} share 5 minutes, {c,d} share 8: same size, longer grid wins.
        let mut recs = records("a", 0..5);
        recs.extend(records("b", 0..5));
        recs.extend(records("c", 100..108));
        recs.extend(records("d", 100..108));
        let segs = [seg("a"), seg("b"), seg("c"), seg("d")];
        let c = select_cohort(&recs, &segs, 3).unwrap();
        assert_eq!(c.segments[0].segment.id, "c");
        assert_eq!(c.len(), 8);

        // equal size and length: lexicographic ids
        let mut recs = records("z", 0..5);
        recs.extend(records("y", 0..5));
        recs.extend(records("b", 50..55));
        recs.extend(records("x", 50..55));
        let segs = [seg("z"), seg("y"), seg("b"), seg("x")];
        let c = select_cohort(&recs, &segs, 5).unwrap();
        let ids: Vec<_> = c.segments.iter().map(|s| s.segment.id.as_str()).collect();
        assert_eq!(ids, ["b", "x"]);
    }

    #[test]
    fn select_keeps_first_duplicate() {
        let mut recs = records("a", 0..3);
        recs.push(RawRecord::new("a", 1, 999.0, 1.0, 99.0).unwrap());
        let c = select_cohort(&recs, &[seg("a")], 3).unwrap();
        assert_eq!(c.segments[0].values[0][1], 51.0);
    }

    #[test]
    fn synth_noiseless_reciprocal_is_exact() {
        let c = synthesize_cohort(&SynthSpec::new(12, 40, 0.0, 3)).unwrap();
        for s in &c.segments {
            for t in 0..s.len() {
                let prod = s.values[0][t] * s.values[1][t];
                assert!((prod - 3600.0 * s.segment.length_km).abs() <= 1e-9 * prod);
                assert!(s.values[0][t] >= MIN_SPEED_KMH);
            }
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synthesize_cohort(&SynthSpec::new(5, 20, 0.05, 9)).unwrap();
        let b = synthesize_cohort(&SynthSpec::new(5, 20, 0.05, 9)).unwrap();
        assert_eq!(a, b);
        let c = synthesize_cohort(&SynthSpec::new(5, 20, 0.05, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_rejects_bad_spec() {
        assert!(synthesize_cohort(&SynthSpec::new(0, 20, 0.05, 1)).is_err());
        assert!(synthesize_cohort(&SynthSpec::new(2, 20, -0.1, 1)).is_err());
        let mut spec = SynthSpec::new(2, 20, 0.0, 1);
        spec.n_streams = 3;
        assert!(synthesize_cohort(&spec).is_err());
        spec.n_streams = 1;
        assert_eq!(synthesize_cohort(&spec).unwrap().n_streams(), 1);
    }

    #[test]
    fn normalize_maps_endpoints() {
        let s = SegmentSeries::complete(seg("a"), vec![0, 1, 2], vec![vec![40.0, 70.0, 100.0]]).unwrap();
        let c = Cohort::new(vec![s], vec!["speed".into()], None).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.segments[0].values[0], vec![0.0, 0.5, 1.0]);
        assert_eq!(n.norm_params, Some(vec![NormParams { min: 40.0, max: 100.0 }]));
        assert!(normalize(&n).is_err());
        assert_eq!(denormalize(&n).unwrap(), c);
        assert!(denormalize(&c).is_err());
    }

    #[test]
    fn normalize_rejects_constant_stream() {
        let s = SegmentSeries::complete(seg("a"), vec![0, 1], vec![vec![1.0, 2.0], vec![5.0, 5.0]]).unwrap();
        let c = Cohort::new(vec![s], vec!["speed".into(), "tt".into()], None).unwrap();
        assert_eq!(normalize(&c), Err(Error::DegenerateStream("tt".into())));
    }

    #[test]
    fn normalize_ignores_missing_entries() {
        let s = SegmentSeries::new(
            seg("a"),
            vec![0, 1, 2],
            vec![vec![10.0, 0.0, 20.0]],
            vec![vec![true, false, true]],
        )
        .unwrap();
        let c = Cohort::new(vec![s], vec!["speed".into()], None).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.segments[0].values[0], vec![0.0, 0.0, 1.0]);
    }
}
