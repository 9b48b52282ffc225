//! Log-log least-squares fits of average regret against problem scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ExpError, Result};
use crate::sweep::SweepRow;

/// The variable regret is regressed against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Total queries `n * m`.
    Nm,
    /// Rounds `n`.
    N,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub scale: Scale,
    /// `(log scale, log mean average regret)` per cell.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn ols(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - intercept - slope * p.0;
            r * r
        })
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Fits `log(mean average regret)` against `log(scale)`, averaging seeds
/// within each `(n, m, d)` cell in linear space first. Rows with
/// non-positive regret are dropped with a warning.
pub fn fit_rate_slope(rows: &[SweepRow], scale: Scale) -> Result<RateFit> {
    let mut cells: BTreeMap<(usize, usize, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        if !(r.average_regret > 0.0) {
            log::warn!(
                "excluding n={} m={} d={} seed={}: average regret {} is not positive",
                r.n,
                r.m,
                r.d,
                r.seed,
                r.average_regret
            );
            continue;
        }
        let e = cells.entry((r.n, r.m, r.d)).or_insert((0.0, 0));
        e.0 += r.average_regret;
        e.1 += 1;
    }
    let points: Vec<(f64, f64)> = cells
        .iter()
        .map(|(&(n, m, _), &(sum, k))| {
            let x = match scale {
                Scale::Nm => (n * m) as f64,
                Scale::N => n as f64,
            };
            (x.ln(), (sum / k as f64).ln())
        })
        .collect();
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(ExpError::Fit(format!(
            "need at least 3 distinct scale values, got {}",
            xs.len()
        )));
    }
    let (slope, intercept, residual_rms) = ols(&points);
    Ok(RateFit {
        scale,
        points,
        slope,
        intercept,
        residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, m: usize, seed: u64, regret: f64) -> SweepRow {
        SweepRow {
            hash: String::new(),
            n,
            m,
            d: 2,
            seed,
            cumulative_regret: regret * n as f64,
            average_regret: regret,
            bound_total: f64::INFINITY,
            bound_violated: false,
            total_bytes: 0,
            last_iterate_value: 0.0,
            average_iterate_value: 0.0,
        }
    }

    #[test]
    fn exact_power_law() {
        let mut rows = Vec::new();
        for n in [10, 20, 40, 80] {
            for m in [1, 3] {
                rows.push(row(n, m, 0, 7.0 * ((n * m) as f64).powf(-0.5)));
            }
        }
        let fit = fit_rate_slope(&rows, Scale::Nm).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 7f64.ln()).abs() < 1e-12);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn constant_regret_has_zero_slope() {
        let rows: Vec<_> = [10, 20, 40].iter().map(|&n| row(n, 1, 0, 0.3)).collect();
        let fit = fit_rate_slope(&rows, Scale::N).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn seeds_are_averaged_before_log() {
        let rows = vec![
            row(10, 1, 0, 1.0),
            row(10, 1, 1, 3.0),
            row(20, 1, 0, 1.0),
            row(40, 1, 0, 1.0),
        ];
        let fit = fit_rate_slope(&rows, Scale::N).unwrap();
        assert_eq!(fit.points[0].1, 2f64.ln());
    }

    #[test]
    fn too_few_points_and_nonpositive_rows() {
        let rows = vec![row(10, 1, 0, 1.0), row(20, 1, 0, 1.0), row(40, 1, 0, -1.0)];
        assert!(fit_rate_slope(&rows, Scale::N).is_err());
    }
}
