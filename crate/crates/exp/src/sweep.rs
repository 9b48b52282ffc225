//! Resumable parameter sweeps.
//!
//! Each cell of the (n, m, d, seed) grid is identified by the hash of its
//! full run config. A cell whose summary file already exists under that
//! hash is loaded instead of recomputed, so an interrupted sweep picks up
//! where it stopped and a finished one costs nothing to re-run.

use std::path::{Path, PathBuf};

use l1fed_core::run_federated;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig};
use crate::error::{ExpError, Result};
use crate::plot::{LinePlot, Series};
use crate::ratefit::{fit_rate_slope, RateFit, Scale};
use crate::report::{atomic_write, config_hash, emit_run, read_json, write_json, RunSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hash: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub cumulative_regret: f64,
    pub average_regret: f64,
    pub bound_total: f64,
    pub bound_violated: bool,
    pub total_bytes: usize,
    pub last_iterate_value: f64,
    pub average_iterate_value: f64,
}

impl SweepRow {
    fn from_summary(s: &RunSummary) -> Self {
        let c = &s.config;
        Self {
            hash: s.hash.clone(),
            n: c.n,
            m: c.m,
            d: c.d,
            seed: c.seed,
            cumulative_regret: s.cumulative_regret,
            average_regret: s.average_regret,
            bound_total: s.bound.total,
            bound_violated: s.bound_violated,
            total_bytes: s.total_bytes,
            last_iterate_value: s.last_iterate_value,
            average_iterate_value: s.average_iterate_value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub computed: usize,
    pub skipped: usize,
    pub failures: Vec<CellFailure>,
    pub bound_violations: usize,
    pub fit_nm: Option<RateFit>,
    /// Fit over the single-worker cells only.
    pub fit_n_single_worker: Option<RateFit>,
    pub figures: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    /// Successful cells, sorted by (n, m, d, seed).
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
    pub table: PathBuf,
}

enum CellResult {
    Computed(SweepRow),
    Skipped(SweepRow),
}

fn run_cell(cfg: &ExperimentConfig, cell: Cell, dir: &Path) -> Result<CellResult> {
    let run = cfg.run_config(cell)?;
    let hash = config_hash(&run);
    let summary_path = dir.join(format!("run-{hash}.json"));
    if summary_path.exists() {
        match read_json::<RunSummary>(&summary_path) {
            Ok(s) if s.hash == hash && s.config == run => return Ok(CellResult::Skipped(SweepRow::from_summary(&s))),
            _ => log::warn!("{}: stale or unreadable summary, recomputing", summary_path.display()),
        }
    }
    let trace = run_federated(&run)?;
    let summary = emit_run(&trace, dir, cfg.plot)?;
    Ok(CellResult::Computed(SweepRow::from_summary(&summary)))
}

fn write_table(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|source| ExpError::Csv {
            path: path.into(),
            source,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| ExpError::Io {
        path: path.into(),
        source: e.into_error(),
    })?;
    atomic_write(path, &bytes)
}

pub fn read_table(path: &Path) -> Result<Vec<SweepRow>> {
    let wrap = |source| ExpError::Csv {
        path: path.into(),
        source,
    };
    csv::Reader::from_path(path)
        .map_err(wrap)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(wrap)
}

/// Fits for both scalings where the grid supports them.
pub fn fits(rows: &[SweepRow]) -> (Option<RateFit>, Option<RateFit>) {
    let nm = fit_rate_slope(rows, Scale::Nm).ok();
    let single: Vec<SweepRow> = rows.iter().filter(|r| r.m == 1).cloned().collect();
    let n = fit_rate_slope(&single, Scale::N).ok();
    (nm, n)
}

fn rate_plot(rows: &[SweepRow], fit: &RateFit) -> LinePlot {
    let mut ms: Vec<usize> = rows.iter().map(|r| r.m).collect();
    ms.sort_unstable();
    ms.dedup();
    let mut series: Vec<Series> = ms
        .iter()
        .map(|&m| {
            let sub: Vec<SweepRow> = rows.iter().filter(|r| r.m == m).cloned().collect();
            let mut pts: Vec<(f64, f64)> = Vec::new();
            let mut ns: Vec<usize> = sub.iter().map(|r| r.n).collect();
            ns.sort_unstable();
            ns.dedup();
            for n in ns {
                let v: Vec<f64> = sub.iter().filter(|r| r.n == n).map(|r| r.average_regret).collect();
                pts.push(((n * m) as f64, v.iter().sum::<f64>() / v.len() as f64));
            }
            Series {
                name: format!("m = {m}"),
                points: pts,
                dashed: false,
            }
        })
        .collect();
    let (lo, hi) = fit
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    series.push(Series {
        name: format!("fit, slope {:.3}", fit.slope),
        points: [lo, hi]
            .iter()
            .map(|&x| (x.exp(), (fit.intercept + fit.slope * x).exp()))
            .collect(),
        dashed: true,
    });
    LinePlot {
        title: "average regret vs total queries".into(),
        x_label: "n m".into(),
        y_label: "average regret".into(),
        log_x: true,
        log_y: true,
        series,
    }
}

/// Runs every cell on a pool of `cfg.workers` threads and writes
/// `sweep.csv` and `sweep-summary.json` into `dir`. Individual cell
/// failures are recorded and do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<SweepOutcome> {
    let cells = cfg.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExpError::Io {
            path: dir.into(),
            source: std::io::Error::other(e),
        })?;
    let results: Vec<(Cell, Result<CellResult>)> = pool.install(|| {
        use rayon::prelude::*;
        cells.par_iter().map(|&c| (c, run_cell(cfg, c, dir))).collect()
    });
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    let (mut computed, mut skipped) = (0, 0);
    for (cell, r) in results {
        match r {
            Ok(CellResult::Computed(row)) => {
                computed += 1;
                rows.push((cell, row));
            }
            Ok(CellResult::Skipped(row)) => {
                skipped += 1;
                rows.push((cell, row));
            }
            Err(e) => {
                log::error!("cell {cell:?} failed: {e}");
                failures.push(CellFailure {
                    cell,
                    error: e.to_string(),
                });
            }
        }
    }
    rows.sort_by_key(|r| r.0);
    let rows: Vec<SweepRow> = rows.into_iter().map(|(_, r)| r).collect();
    let table = dir.join("sweep.csv");
    write_table(&rows, &table)?;
    let (fit_nm, fit_n_single_worker) = fits(&rows);
    let mut figures = Vec::new();
    if cfg.plot {
        if let Some(fit) = &fit_nm {
            let name = "sweep-rate.svg".to_string();
            atomic_write(&dir.join(&name), rate_plot(&rows, fit).render().as_bytes())?;
            figures.push(name);
        }
    }
    let summary = SweepSummary {
        cells: cells.len(),
        computed,
        skipped,
        bound_violations: rows.iter().filter(|r| r.bound_violated).count(),
        failures,
        fit_nm,
        fit_n_single_worker,
        figures,
    };
    write_json(&dir.join("sweep-summary.json"), &summary)?;
    Ok(SweepOutcome { rows, summary, table })
}
