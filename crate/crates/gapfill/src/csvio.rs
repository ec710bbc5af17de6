//! CSV formats: raw records, cohorts and ground-truth ledgers.
//!
//! Cohort files reuse the raw-record columns, one row per (segment, minute).
//! After masking an extra `observed` column holds one `0`/`1` digit per
//! stream and missing values are left empty.

use std::collections::HashMap;
use std::io::{Read, Write};

use gapfill_core::data::{Cohort, GeoPoint, RawRecord, RoadSegment, SegmentSeries, SPEED_STREAM, TRAVEL_TIME_STREAM};
use gapfill_core::masking::{GroundTruthLedger, LedgerEntry};

use crate::{Error, Result};

pub const RECORD_HEADER: [&str; 10] = [
    "segment_id",
    "start_lat",
    "start_lon",
    "end_lat",
    "end_lon",
    "length_km",
    "timestamp_min",
    "speed_kmh",
    "travel_time_s",
    "confidence_pct",
];

pub const OBSERVED_COLUMN: &str = "observed";

pub const LEDGER_HEADER: [&str; 4] = ["segment_idx", "stream_idx", "time_idx", "true_value"];

/// Confidence written for cohort rows, which carry no record quality.
const COHORT_CONFIDENCE: &str = "100";

/// Result of [`ingest_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    /// Rows at or above the confidence threshold, in file order.
    pub records: Vec<RawRecord>,
    /// Segments in order of first appearance, described by their first row.
    pub segments: Vec<RoadSegment>,
    /// Rows below the threshold.
    pub dropped: usize,
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, csv::Position::line);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Row {
            line,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Utf8 { .. } => Error::Row { line, message: "invalid UTF-8".into() },
        _ => Error::Schema(e.to_string()),
    }
}

/// Checks the header against `expected`, optionally followed by `extra`.
/// Returns whether `extra` is present.
fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str], extra: Option<&str>) -> Result<bool> {
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() {
        return Err(Error::Schema("empty file".into()));
    }
    let names: Vec<&str> = header.iter().collect();
    if let Some(missing) = expected.iter().find(|c| !names.contains(c)) {
        return Err(Error::Schema(format!("missing column `{missing}`")));
    }
    let with_extra = match (&names[..], extra) {
        (n, _) if n == expected => false,
        (n, Some(x)) if n.len() == expected.len() + 1 && n[..expected.len()] == *expected && n[expected.len()] == x => true,
        _ => {
            return Err(Error::Schema(format!(
                "header `{}` must be exactly `{}`",
                names.join(","),
                expected.join(",")
            )))
        }
    };
    Ok(with_extra)
}

fn parse<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, column: &str, line: u64) -> Result<T> {
    let raw = record.get(idx).unwrap_or("");
    raw.trim().parse().map_err(|_| Error::Row { line, message: format!("column `{column}`: cannot parse `{raw}`") })
}

fn row_error(line: u64) -> impl Fn(gapfill_core::Error) -> Error {
    move |e| Error::Row { line, message: e.to_string() }
}

fn parse_segment(record: &csv::StringRecord, line: u64) -> Result<RoadSegment> {
    let f = |i: usize| parse::<f64>(record, i, RECORD_HEADER[i], line);
    let start = GeoPoint::new(f(1)?, f(2)?).map_err(row_error(line))?;
    let end = GeoPoint::new(f(3)?, f(4)?).map_err(row_error(line))?;
    RoadSegment::new(&record[0], start, end, f(5)?).map_err(row_error(line))
}

/// Reads raw per-minute records, keeping rows with confidence at least
/// `min_confidence`.
pub fn ingest_csv<R: Read>(source: R, min_confidence: f64) -> Result<Ingested> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &RECORD_HEADER, None)?;
    let mut out = Ingested { records: Vec::new(), segments: Vec::new(), dropped: 0 };
    let mut seen = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, csv::Position::line);
        let segment = parse_segment(&row, line)?;
        let record = RawRecord::new(
            &row[0],
            parse(&row, 6, RECORD_HEADER[6], line)?,
            parse(&row, 7, RECORD_HEADER[7], line)?,
            parse(&row, 8, RECORD_HEADER[8], line)?,
            parse(&row, 9, RECORD_HEADER[9], line)?,
        )
        .map_err(row_error(line))?;
        if !seen.contains_key(&segment.id) {
            seen.insert(segment.id.clone(), out.segments.len());
            out.segments.push(segment);
        }
        if record.confidence >= min_confidence {
            out.records.push(record);
        } else {
            out.dropped += 1;
        }
    }
    Ok(out)
}

/// Writes a two-stream cohort in raw units. The `observed` column is added
/// when any entry is missing.
pub fn write_cohort<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    if cohort.stream_names != [SPEED_STREAM, TRAVEL_TIME_STREAM] {
        return Err(Error::Schema(format!(
            "cohort files carry the streams `{SPEED_STREAM}` and `{TRAVEL_TIME_STREAM}`, not {:?}",
            cohort.stream_names
        )));
    }
    if cohort.norm_params.is_some() {
        return Err(Error::Schema("cohort files hold raw units; denormalize first".into()));
    }
    let masked = !cohort.is_complete();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    let mut header: Vec<&str> = RECORD_HEADER.to_vec();
    if masked {
        header.push(OBSERVED_COLUMN);
    }
    w.write_record(&header).map_err(csv_error)?;
    for s in &cohort.segments {
        let seg = &s.segment;
        for (t, ts) in s.timestamps.iter().enumerate() {
            let value = |d: usize| if s.observed[d][t] { s.values[d][t].to_string() } else { String::new() };
            let mut row = vec![
                seg.id.clone(),
                seg.start.lat.to_string(),
                seg.start.lon.to_string(),
                seg.end.lat.to_string(),
                seg.end.lon.to_string(),
                seg.length_km.to_string(),
                ts.to_string(),
                value(0),
                value(1),
                COHORT_CONFIDENCE.to_string(),
            ];
            if masked {
                row.push((0..2).map(|d| if s.observed[d][t] { '1' } else { '0' }).collect());
            }
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))?;
    Ok(())
}

/// Reads a cohort written by [`write_cohort`] (or any record file whose
/// segments share one timestamp grid).
pub fn read_cohort<R: Read>(source: R) -> Result<Cohort> {
    let mut rdr = reader(source);
    let with_observed = check_header(&mut rdr, &RECORD_HEADER, Some(OBSERVED_COLUMN))?;
    struct Partial {
        segment: RoadSegment,
        timestamps: Vec<i64>,
        values: [Vec<f64>; 2],
        observed: [Vec<bool>; 2],
    }
    let mut order: Vec<Partial> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, csv::Position::line);
        let observed: [bool; 2] = if with_observed {
            let flags = row.get(10).unwrap_or("").trim();
            let bits: Vec<bool> = flags.chars().filter_map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            }).collect();
            if bits.len() != 2 || flags.len() != 2 {
                return Err(Error::Row { line, message: format!("column `{OBSERVED_COLUMN}`: expected two 0/1 digits, found `{flags}`") });
            }
            [bits[0], bits[1]]
        } else {
            [true, true]
        };
        let id = &row[0];
        let slot = match index.get(id) {
            Some(&i) => i,
            None => {
                index.insert(id.to_string(), order.len());
                order.push(Partial {
                    segment: parse_segment(&row, line)?,
                    timestamps: Vec::new(),
                    values: [Vec::new(), Vec::new()],
                    observed: [Vec::new(), Vec::new()],
                });
                order.len() - 1
            }
        };
        let p = &mut order[slot];
        let ts: i64 = parse(&row, 6, RECORD_HEADER[6], line)?;
        if p.timestamps.last().is_some_and(|&last| ts <= last) {
            return Err(Error::Row { line, message: format!("segment `{id}`: timestamps must ascend") });
        }
        p.timestamps.push(ts);
        for d in 0..2 {
            let v = if observed[d] { parse(&row, 7 + d, RECORD_HEADER[7 + d], line)? } else { 0.0 };
            p.values[d].push(v);
            p.observed[d].push(observed[d]);
        }
    }
    if order.is_empty() {
        return Err(Error::Schema("no cohort rows".into()));
    }
    let segments = order
        .into_iter()
        .map(|p| {
            let [v0, v1] = p.values;
            let [o0, o1] = p.observed;
            SegmentSeries::new(p.segment, p.timestamps, vec![v0, v1], vec![o0, o1])
        })
        .collect::<gapfill_core::Result<Vec<_>>>()?;
    let names = vec![SPEED_STREAM.to_string(), TRAVEL_TIME_STREAM.to_string()];
    Ok(Cohort::new(segments, names, None)?)
}

pub fn write_ledger<W: Write>(ledger: &GroundTruthLedger, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(LEDGER_HEADER).map_err(csv_error)?;
    for e in ledger.entries() {
        w.write_record([e.segment.to_string(), e.stream.to_string(), e.time.to_string(), e.value.to_string()])
            .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))?;
    Ok(())
}

pub fn read_ledger<R: Read>(source: R) -> Result<GroundTruthLedger> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &LEDGER_HEADER, None)?;
    let mut entries = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, csv::Position::line);
        entries.push(LedgerEntry {
            segment: parse(&row, 0, LEDGER_HEADER[0], line)?,
            stream: parse(&row, 1, LEDGER_HEADER[1], line)?,
            time: parse(&row, 2, LEDGER_HEADER[2], line)?,
            value: parse(&row, 3, LEDGER_HEADER[3], line)?,
        });
    }
    Ok(GroundTruthLedger::new(entries)?)
}
