//! Comparison reports and their CSV and SVG renderings.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use gapfill_core::metrics::eta;

use crate::{Error, Result};

pub const REPORT_HEADER: [&str; 9] =
    ["method", "axis", "axis_value", "fold", "n_segments", "seq_length", "tau", "rmse", "runtime_s"];

pub const ETA_HEADER: [&str; 3] = ["method", "vs", "eta_pct"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Mrnn,
    Spline,
    SoftImpute,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mrnn, Method::Spline, Method::SoftImpute];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mrnn => "mrnn",
            Self::Spline => "spline",
            Self::SoftImpute => "soft_impute",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected mrnn, spline or soft_impute)"))
    }
}

/// What a report's rows vary over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    /// A single cross-validation run.
    None,
    Tau,
    Length,
    Segments,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Tau => "tau",
            Self::Length => "L",
            Self::Segments => "N",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::None => "run",
            Self::Tau => "missing threshold tau",
            Self::Length => "sequence length L",
            Self::Segments => "number of segments N",
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tau" => Ok(Self::Tau),
            "L" | "length" => Ok(Self::Length),
            "N" | "segments" => Ok(Self::Segments),
            "none" => Ok(Self::None),
            _ => Err(format!("unknown axis `{s}` (expected tau, L or N)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub axis: Axis,
    pub axis_value: Option<f64>,
    pub fold: usize,
    pub n_segments: usize,
    pub seq_length: usize,
    /// Eval-mask probability; absent for the Gaussian pattern.
    pub tau: Option<f64>,
    pub rmse: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaRow {
    pub method: Method,
    pub vs: Method,
    pub eta_pct: f64,
}

/// Per-method, per-fold scores, kept in canonical (method, axis value,
/// fold) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    rows: Vec<ReportRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComparisonReport {
    pub fn new(mut rows: Vec<ReportRow>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| !(r.rmse.is_finite() && r.rmse >= 0.0)) {
            return Err(gapfill_core::Error::Numerical(format!("{} RMSE {} in fold {}", bad.method.name(), bad.rmse, bad.fold)).into());
        }
        rows.sort_by(|a, b| {
            (a.method, a.axis)
                .cmp(&(b.method, b.axis))
                .then(a.axis_value.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.axis_value.unwrap_or(f64::NEG_INFINITY)))
                .then(a.fold.cmp(&b.fold))
        });
        Ok(Self { rows })
    }

    /// Concatenation of several reports.
    pub fn merge(reports: impl IntoIterator<Item = ComparisonReport>) -> Result<Self> {
        Self::new(reports.into_iter().flat_map(|r| r.rows).collect())
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        m.dedup();
        m
    }

    /// Distinct axis values in ascending order.
    pub fn axis_values(&self) -> Vec<Option<f64>> {
        let mut v: Vec<Option<f64>> = self.rows.iter().map(|r| r.axis_value).collect();
        v.sort_by(|a, b| a.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.unwrap_or(f64::NEG_INFINITY)));
        v.dedup();
        v
    }

    fn at(&self, method: Method, axis_value: Option<f64>) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.method == method && r.axis_value == axis_value)
    }

    /// Fold-mean RMSE of one method at one axis value.
    pub fn mean_rmse(&self, method: Method, axis_value: Option<f64>) -> Option<f64> {
        let (sum, n) = self.at(method, axis_value).fold((0.0, 0usize), |(s, n), r| (s + r.rmse, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// RMSE of one method in one fold.
    pub fn fold_rmse(&self, method: Method, axis_value: Option<f64>, fold: usize) -> Option<f64> {
        self.at(method, axis_value).find(|r| r.fold == fold).map(|r| r.rmse)
    }

    /// Improvement of the M-RNN over each baseline at one axis value, from
    /// fold-mean RMSEs.
    pub fn etas(&self, axis_value: Option<f64>) -> Result<Vec<EtaRow>> {
        let Some(reference) = self.mean_rmse(Method::Mrnn, axis_value) else {
            return Ok(Vec::new());
        };
        self.methods()
            .into_iter()
            .filter(|&m| m != Method::Mrnn)
            .filter_map(|vs| self.mean_rmse(vs, axis_value).map(|other| (vs, other)))
            .map(|(vs, other)| Ok(EtaRow { method: Method::Mrnn, vs, eta_pct: eta(reference, other)? }))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        if self.rows.is_empty() {
            return Err(gapfill_core::Error::Precondition("empty report".into()).into());
        }
        let mut w = csv_writer(sink);
        write_row(&mut w, REPORT_HEADER.map(String::from))?;
        for r in &self.rows {
            write_row(
                &mut w,
                [
                    r.method.name().to_string(),
                    r.axis.name().to_string(),
                    opt(r.axis_value),
                    r.fold.to_string(),
                    r.n_segments.to_string(),
                    r.seq_length.to_string(),
                    opt(r.tau),
                    r.rmse.to_string(),
                    r.runtime_s.to_string(),
                ],
            )?;
        }
        finish(w)
    }

    pub fn write_eta_csv<W: Write>(&self, axis_value: Option<f64>, sink: W) -> Result<()> {
        let rows = self.etas(axis_value)?;
        if rows.is_empty() {
            return Err(gapfill_core::Error::Precondition("no M-RNN and baseline rows to compare".into()).into());
        }
        let mut w = csv_writer(sink);
        write_row(&mut w, ETA_HEADER.map(String::from))?;
        for e in rows {
            write_row(&mut w, [e.method.name().to_string(), e.vs.name().to_string(), e.eta_pct.to_string()])?;
        }
        finish(w)
    }

    /// Line chart of fold-mean RMSE against the axis, one polyline per
    /// method.
    pub fn write_svg<W: Write>(&self, axis: Axis, mut sink: W) -> Result<()> {
        let svg = self.render_svg(axis)?;
        sink.write_all(svg.as_bytes()).map_err(|e| Error::Schema(format!("write failed: {e}")))
    }

    fn render_svg(&self, axis: Axis) -> Result<String> {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.axis == axis).collect();
        if rows.is_empty() {
            return Err(gapfill_core::Error::Precondition(format!("report has no rows for axis {}", axis.name())).into());
        }
        let xs: Vec<f64> = self.axis_values().into_iter().map(|v| v.unwrap_or(0.0)).collect();
        let series: Vec<(Method, Vec<(f64, f64)>)> = self
            .methods()
            .into_iter()
            .map(|m| {
                let pts = self
                    .axis_values()
                    .into_iter()
                    .filter_map(|v| self.mean_rmse(m, v).map(|y| (v.unwrap_or(0.0), y)))
                    .collect();
                (m, pts)
            })
            .collect();
        let ys = series.iter().flat_map(|(_, p)| p.iter().map(|&(_, y)| y));
        let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        let (x_lo, x_hi) = (xs[0], xs[xs.len() - 1]);
        let pad = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let ((x_lo, x_hi), (y_lo, y_hi)) = (pad(x_lo, x_hi), pad(y_lo, y_hi));
        let (left, right, top, bottom) = (90.0, 760.0, 40.0, 520.0);
        let px = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * (right - left);
        let py = |y: f64| bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top);
        const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="800" height="600" viewBox="0 0 800 600">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="800" height="600" fill="white"/>"#);
        let _ = writeln!(s, r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#);
        let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
        for &x in &xs {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" font-size="12" text-anchor="middle">{x}</text>"#,
                px(x),
                bottom + 18.0
            );
        }
        for y in [y_lo, (y_lo + y_hi) / 2.0, y_hi] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" font-size="12" text-anchor="end">{y:.5}</text>"#,
                left - 6.0,
                py(y) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            bottom + 45.0,
            axis.label()
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 20 {})">mean RMSE</text>"#,
            (top + bottom) / 2.0,
            (top + bottom) / 2.0
        );
        for (i, (m, pts)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                points.join(" ")
            );
            let ly = top + 10.0 + 20.0 * i as f64;
            let _ = writeln!(s, r#"<line x1="600" y1="{ly}" x2="630" y2="{ly}" stroke="{color}" stroke-width="2"/>"#);
            let _ = writeln!(s, r#"<text x="638" y="{}" font-size="12">{}</text>"#, ly + 4.0, m.name());
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

fn write_row<W: Write, const N: usize>(w: &mut csv::Writer<W>, row: [String; N]) -> Result<()> {
    w.write_record(&row).map_err(|e| Error::Schema(format!("write failed: {e}")))
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))
}

fn to_file(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn emit_report(report: &ComparisonReport, path: &Path) -> Result<()> {
    to_file(path, |b| report.write_csv(b))
}

pub fn emit_eta(report: &ComparisonReport, axis_value: Option<f64>, path: &Path) -> Result<()> {
    to_file(path, |b| report.write_eta_csv(axis_value, b))
}

pub fn emit_plot(report: &ComparisonReport, axis: Axis, path: &Path) -> Result<()> {
    to_file(path, |b| report.write_svg(axis, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, value: f64, fold: usize, rmse: f64) -> ReportRow {
        ReportRow {
            method,
            axis: Axis::Tau,
            axis_value: Some(value),
            fold,
            n_segments: 10,
            seq_length: 20,
            tau: Some(value),
            rmse,
            runtime_s: 0.0,
        }
    }

    fn two_by_three() -> ComparisonReport {
        let mut rows = Vec::new();
        for (i, v) in [0.3, 0.1, 0.2].into_iter().enumerate() {
            rows.push(row(Method::Spline, v, 0, 0.05 + i as f64 * 0.01));
            rows.push(row(Method::Mrnn, v, 0, 0.04));
        }
        ComparisonReport::new(rows).unwrap()
    }

    #[test]
    fn canonical_order() {
        let r = two_by_three();
        let order: Vec<(Method, f64)> = r.rows().iter().map(|r| (r.method, r.axis_value.unwrap())).collect();
        assert_eq!(order[0], (Method::Mrnn, 0.1));
        assert_eq!(order[3], (Method::Spline, 0.1));
        assert_eq!(order[5], (Method::Spline, 0.3));
    }

    #[test]
    fn svg_structure_and_determinism() {
        let r = two_by_three();
        let mut a = Vec::new();
        r.write_svg(Axis::Tau, &mut a).unwrap();
        let mut b = Vec::new();
        r.write_svg(Axis::Tau, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
        for line in text.lines().filter(|l| l.starts_with("<polyline")) {
            let points = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            assert_eq!(points.split(' ').count(), 3);
        }
        assert!(text.contains(r#"viewBox="0 0 800 600""#));
        assert!(!text.contains("href"));
        assert!(r.write_svg(Axis::Length, &mut Vec::new()).is_err());
    }

    #[test]
    fn single_row_csv() {
        let r = ComparisonReport::new(vec![row(Method::Spline, 0.2, 3, 0.125)]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "method,axis,axis_value,fold,n_segments,seq_length,tau,rmse,runtime_s\nspline,tau,0.2,3,10,20,0.2,0.125,0\n");
        assert!(ComparisonReport::new(vec![]).unwrap().write_csv(Vec::new()).is_err());
    }

    #[test]
    fn eta_rows() {
        let r = ComparisonReport::new(vec![
            row(Method::Mrnn, 0.2, 0, 0.01278),
            row(Method::Spline, 0.2, 0, 0.01938),
            row(Method::SoftImpute, 0.2, 0, 0.02021),
        ])
        .unwrap();
        let etas = r.etas(Some(0.2)).unwrap();
        assert_eq!(etas.len(), 2);
        assert!((etas[0].eta_pct - 51.64).abs() < 0.02);
        assert!((etas[1].eta_pct - 58.13).abs() < 0.02);
        let mut buf = Vec::new();
        r.write_eta_csv(Some(0.2), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("method,vs,eta_pct\nmrnn,spline,"));
    }

    #[test]
    fn rejects_negative_rmse() {
        assert!(ComparisonReport::new(vec![row(Method::Mrnn, 0.1, 0, -1.0)]).is_err());
    }
}
