use alloc::vec;
use alloc::vec::Vec;

use crate::data::SegmentSeries;

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivative at each knot; zero at both ends.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    /// Needs at least two knots with strictly increasing `xs`.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Option<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n || xs.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations
            //   h[i-1] m[i-1] + 2 (h[i-1] + h[i]) m[i] + h[i] m[i+1] = rhs[i]
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
            }
            for j in 1..k {
                let w = h[j] / diag[j - 1];
                diag[j] -= w * h[j];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
            }
        }
        Some(Self { xs, ys, m })
    }

    /// Value at `x`. Outside the knot span the spline continues as the
    /// straight line it ends on (zero curvature at both ends).
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            let h = self.xs[1] - self.xs[0];
            let slope = (self.ys[1] - self.ys[0]) / h - h * self.m[1] / 6.0;
            return self.ys[0] + slope * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            let h = self.xs[n - 1] - self.xs[n - 2];
            let slope = (self.ys[n - 1] - self.ys[n - 2]) / h + h * self.m[n - 2] / 6.0;
            return self.ys[n - 1] + slope * (x - self.xs[n - 1]);
        }
        let i = self.xs.partition_point(|&k| k <= x) - 1;
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let (a, b) = (x1 - x, x - x0);
        self.m[i] * a * a * a / (6.0 * h)
            + self.m[i + 1] * b * b * b / (6.0 * h)
            + (self.ys[i] / h - self.m[i] * h / 6.0) * a
            + (self.ys[i + 1] / h - self.m[i + 1] * h / 6.0) * b
    }
}

fn linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&k| k <= x).clamp(1, xs.len() - 1) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + w * (ys[i + 1] - ys[i])
}

/// Fills every missing entry from the stream's own observations over time.
///
/// With `k` observed points: none gives 0.5, one gives a constant, two or
/// three give piecewise-linear fills, four or more a natural cubic spline.
/// Points outside the observed span lie on the end segment's line.
pub fn spline_impute(series: &SegmentSeries) -> SegmentSeries {
    let mut out = series.clone();
    let ts: Vec<f64> = series.timestamps.iter().map(|&t| t as f64).collect();
    for (vals, obs) in out.values.iter_mut().zip(out.observed.iter_mut()) {
        let (kx, ky): (Vec<f64>, Vec<f64>) = ts
            .iter()
            .zip(vals.iter())
            .zip(obs.iter())
            .filter(|(_, &o)| o)
            .map(|((&t, &v), _)| (t, v))
            .unzip();
        let spline = if kx.len() >= 4 { NaturalCubicSpline::new(kx.clone(), ky.clone()) } else { None };
        for t in 0..vals.len() {
            if obs[t] {
                continue;
            }
            vals[t] = match (kx.len(), &spline) {
                (0, _) => 0.5,
                (1, _) => ky[0],
                (_, Some(s)) => s.eval(ts[t]),
                (_, None) => linear(&kx, &ky, ts[t]),
            };
            obs[t] = true;
        }
    }
    out
}
