//! Log-log slope fitting for convergence traces.

use iapda::{Error, Result};
use log::warn;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub k_lo: f64,
    pub k_hi: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Set when non-positive values forced a narrower window than requested.
    pub shrunk: bool,
}

/// Least-squares line through `(log k, log y)` for `k` in `[k_lo, k_hi]`.
///
/// If the window contains non-positive values it is shrunk to the longest run
/// of consecutive positive points (with a warning).
pub fn fit_rate_slope(series: &[(f64, f64)], k_lo: f64, k_hi: f64) -> Result<RateFit> {
    if !(k_lo > 0.0 && k_hi > k_lo) {
        return Err(Error::Config(format!(
            "rate window needs 0 < k_lo < k_hi, got [{k_lo}, {k_hi}]"
        )));
    }
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(k, _)| k >= k_lo && k <= k_hi)
        .collect();
    if window.is_empty() {
        return Err(Error::Config(format!("no points in window [{k_lo}, {k_hi}]")));
    }
    let positive = |y: f64| y > 0.0 && y.is_finite();
    let mut points = window.clone();
    let mut shrunk = false;
    if !window.iter().all(|&(_, y)| positive(y)) {
        let (mut best, mut start) = ((0, 0), 0);
        for i in 0..=window.len() {
            if i == window.len() || !positive(window[i].1) {
                if i - start > best.1 - best.0 {
                    best = (start, i);
                }
                start = i + 1;
            }
        }
        points = window[best.0..best.1].to_vec();
        shrunk = true;
        if let (Some(first), Some(last)) = (points.first(), points.last()) {
            warn!(
                "non-positive values in [{k_lo}, {k_hi}]; fitting over [{}, {}] instead",
                first.0, last.0
            );
        }
    }
    if points.len() < 2 {
        return Err(Error::Config(format!(
            "fewer than two positive points in window [{k_lo}, {k_hi}]"
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(k, y)| (k.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        k_lo: points[0].0,
        k_hi: points[points.len() - 1].0,
        slope,
        intercept,
        r_squared,
        points: points.len(),
        shrunk,
    })
}

/// Convenience for integer-indexed traces.
pub fn fit_trace_column(series: &[(usize, f64)], k_lo: usize, k_hi: usize) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series.iter().map(|&(k, y)| (k as f64, y)).collect();
    fit_rate_slope(&pts, k_lo as f64, k_hi as f64)
}

/// Reads two named columns of a CSV trace (`NaN` cells are kept as `NaN`).
pub fn read_csv_columns(text: &str, x_col: &str, y_col: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not in header {header:?}")))
    };
    let (xi, yi) = (find(x_col)?, find(y_col)?);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let cell = |j: usize| -> Result<f64> {
            let raw = cells.get(j).map(|c| c.trim()).unwrap_or("");
            raw.parse::<f64>().map_err(|e| Error::Parse {
                source_name: "trace csv".into(),
                line: i + 2,
                message: format!("{raw:?}: {e}"),
            })
        };
        out.push((cell(xi)?, cell(yi)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (1..=2000).map(|k| (k as f64, f(k as f64))).collect()
    }

    #[test]
    fn exact_power_law() {
        let fit = fit_rate_slope(&series(|k| k.powi(-2)), 10.0, 1000.0).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.points, 991);
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let fit = fit_rate_slope(&series(|_| 3.0), 10.0, 1000.0).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let fit = fit_rate_slope(&series(|k| 5.0 * k.powf(-2.5) * (1.0 + 0.01 * k.sin())), 10.0, 1000.0).unwrap();
        assert!((fit.slope + 2.5).abs() < 0.05);
    }

    #[test]
    fn nonpositive_values_shrink_the_window() {
        let data = series(|k| if k > 500.0 { 0.0 } else { k.powi(-1) });
        let fit = fit_rate_slope(&data, 10.0, 1000.0).unwrap();
        assert!(fit.shrunk);
        assert_eq!(fit.k_hi, 500.0);
        assert!((fit.slope + 1.0).abs() < 1e-9);
        assert!(fit_rate_slope(&series(|_| 0.0), 10.0, 1000.0).is_err());
        assert!(fit_rate_slope(&data, 3000.0, 4000.0).is_err());
        assert!(fit_rate_slope(&data, 10.0, 5.0).is_err());
    }

    #[test]
    fn csv_columns() {
        let text = "k,a,b\n1,2,NaN\n2,4,0.5\n";
        let pts = read_csv_columns(text, "k", "a").unwrap();
        assert_eq!(pts, vec![(1.0, 2.0), (2.0, 4.0)]);
        assert!(read_csv_columns(text, "k", "b").unwrap()[0].1.is_nan());
        assert!(read_csv_columns(text, "k", "zz").is_err());
        assert!(read_csv_columns("k,a\n1,x\n", "k", "a").is_err());
    }

    proptest! {
        #[test]
        fn recovers_any_power_law(p in -4.0f64..1.0, scale in 1e-6f64..1e6, lo in 1.0f64..50.0, width in 2.0f64..100.0) {
            let fit = fit_rate_slope(&series(|k| scale * k.powf(p)), lo, lo * width).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-9, "{} vs {p}", fit.slope);
            prop_assert!((fit.intercept - scale.ln()).abs() < 1e-7);
        }
    }
}
