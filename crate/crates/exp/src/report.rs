//! CSV, JSON and SVG output.
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! a crashed or concurrent writer never leaves a truncated result behind.

use std::fs;
use std::path::{Path, PathBuf};

use l1fed_core::concentration::TailReport;
use l1fed_core::fed_sim::event_budgets;
use l1fed_core::{
    make_problem, theoretical_regret_bound, CoverageResult, EventBudgets, IncrementLaw, RegretBound, RunConfig,
    RunTrace,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, ExpError, Result};
use crate::plot::{LinePlot, Series};

/// First 16 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("RunConfig serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}-{:?}", std::process::id(), std::thread::current().id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| ExpError::Json {
        path: path.into(),
        source,
    })?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| ExpError::Json {
        path: path.into(),
        source,
    })
}

/// 17 significant digits: enough to round-trip any f64.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let wrap = |source| ExpError::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| ExpError::Io {
        path: path.into(),
        source: e.into_error(),
    })
}

/// One parsed line of a trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub x: Vec<f64>,
    pub f_x: f64,
    pub regret: f64,
    pub g_norm_sq: f64,
    pub bytes: usize,
}

pub fn trace_rows(trace: &RunTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            t: r.t,
            x: r.x.clone(),
            f_x: r.f_x,
            regret: r.regret,
            g_norm_sq: r.g_norm_sq,
            bytes: r.message_bytes.iter().sum(),
        })
        .collect()
}

pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let d = trace.config.d;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.extend(["f_x_t", "regret_t", "g_norm_sq", "bytes"].map(String::from));
    let rows = trace_rows(trace).into_iter().map(|r| {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.x.iter().map(|v| fmt_f64(*v)));
        rec.extend([fmt_f64(r.f_x), fmt_f64(r.regret), fmt_f64(r.g_norm_sq), r.bytes.to_string()]);
        rec
    });
    atomic_write(path, &csv_bytes(path, header, rows)?)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let wrap = |source| ExpError::Csv {
        path: path.into(),
        source,
    };
    let bad = |what: &str| ExpError::Io {
        path: path.into(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, what.to_string()),
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let d = r.headers().map_err(wrap)?.len().checked_sub(5).ok_or_else(|| bad("too few columns"))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad("bad float"));
        out.push(TraceRow {
            t: rec[0].parse().map_err(|_| bad("bad round index"))?,
            x: (1..=d).map(f).collect::<Result<_>>()?,
            f_x: f(d + 1)?,
            regret: f(d + 2)?,
            g_norm_sq: f(d + 3)?,
            bytes: rec[d + 4].parse().map_err(|_| bad("bad byte count"))?,
        });
    }
    Ok(out)
}

/// Everything recorded about one run besides the per-round trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub hash: String,
    pub config: RunConfig,
    pub lipschitz: f64,
    pub diameter: f64,
    pub comparator_value: f64,
    pub cumulative_regret: f64,
    pub average_regret: f64,
    pub last_iterate_value: f64,
    pub average_iterate_value: f64,
    pub total_bytes: usize,
    pub bound: RegretBound,
    /// Whether the cumulative regret exceeded `bound.total`.
    pub bound_violated: bool,
    pub budgets: EventBudgets,
    pub trace_file: String,
    pub figures: Vec<String>,
}

pub fn summarize(trace: &RunTrace) -> Result<RunSummary> {
    let cfg = &trace.config;
    let lipschitz = make_problem(&cfg.problem)?.lipschitz;
    let diameter = cfg.set.diameter();
    let bound = theoretical_regret_bound(cfg, lipschitz, diameter);
    let hash = config_hash(cfg);
    Ok(RunSummary {
        trace_file: format!("run-{hash}.csv"),
        hash,
        config: cfg.clone(),
        lipschitz,
        diameter,
        comparator_value: trace.comparator.value,
        cumulative_regret: trace.cumulative_regret,
        average_regret: trace.average_regret,
        last_iterate_value: trace.last_iterate_value,
        average_iterate_value: trace.average_iterate_value,
        total_bytes: trace.total_bytes,
        bound_violated: trace.cumulative_regret > bound.total,
        bound,
        budgets: event_budgets(cfg.n, cfg.m, cfg.d, lipschitz, diameter, cfg.delta),
        figures: Vec::new(),
    })
}

fn regret_plot(trace: &RunTrace) -> LinePlot {
    let mut cum = 0.0;
    let points = trace
        .records
        .iter()
        .map(|r| {
            cum += r.regret;
            (r.t as f64, cum)
        })
        .collect();
    let c = &trace.config;
    LinePlot {
        title: format!("cumulative regret (n={}, m={}, d={}, seed={})", c.n, c.m, c.d, c.seed),
        x_label: "round t".into(),
        y_label: "sum of f(x_t) - f*".into(),
        log_x: false,
        log_y: false,
        series: vec![Series {
            name: "regret".into(),
            points,
            dashed: false,
        }],
    }
}

/// Writes `run-<hash>.csv`, `run-<hash>.json` and, with `plot`, the regret
/// curve. Returns the summary.
pub fn emit_run(trace: &RunTrace, dir: &Path, plot: bool) -> Result<RunSummary> {
    let mut summary = summarize(trace)?;
    write_trace_csv(trace, &dir.join(&summary.trace_file))?;
    if plot {
        let name = format!("run-{}-regret.svg", summary.hash);
        atomic_write(&dir.join(&name), regret_plot(trace).render().as_bytes())?;
        summary.figures.push(name);
    }
    write_json(&dir.join(format!("run-{}.json", summary.hash)), &summary)?;
    Ok(summary)
}

pub fn tail_file_stem(report: &TailReport) -> String {
    match report.function {
        Some(f) => format!("tails-{}-d{}-{}", report.kind, report.d, f.name()),
        None => format!("tails-{}-d{}", report.kind, report.d),
    }
}

pub fn write_tail_csv(report: &TailReport, path: &Path) -> Result<()> {
    let header = ["kind", "d", "N", "r", "empirical", "se", "envelope", "violated"].map(String::from);
    let rows = report.grid.iter().map(|row| {
        vec![
            report.kind.to_string(),
            report.d.to_string(),
            report.samples.to_string(),
            fmt_f64(row.r),
            fmt_f64(row.empirical),
            fmt_f64(row.se),
            fmt_f64(row.envelope),
            row.violated.to_string(),
        ]
    });
    atomic_write(path, &csv_bytes(path, header.to_vec(), rows)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSummaryEntry {
    pub kind: String,
    pub d: usize,
    pub function: Option<String>,
    pub samples: usize,
    pub seed: u64,
    pub counted_points: usize,
    pub violations: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailsSummary {
    pub entries: Vec<TailSummaryEntry>,
    pub total_violations: usize,
    pub figures: Vec<String>,
}

fn tail_plot(report: &TailReport) -> LinePlot {
    let floor = 0.5 / report.samples as f64;
    LinePlot {
        title: format!("{} tail, d = {}", report.kind, report.d),
        x_label: "r".into(),
        y_label: "P(statistic > r)".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series {
                name: "empirical".into(),
                points: report.grid.iter().map(|r| (r.r, r.empirical.max(floor))).collect(),
                dashed: false,
            },
            Series {
                name: "envelope".into(),
                points: report.grid.iter().map(|r| (r.r, r.envelope)).collect(),
                dashed: true,
            },
        ],
    }
}

/// One CSV per report, plus `tails-summary.json` and optional overlays.
pub fn emit_tails(reports: &[TailReport], dir: &Path, plot: bool) -> Result<TailsSummary> {
    let mut entries = Vec::new();
    let mut figures = Vec::new();
    for r in reports {
        let stem = tail_file_stem(r);
        let file = format!("{stem}.csv");
        write_tail_csv(r, &dir.join(&file))?;
        if plot {
            let name = format!("{stem}.svg");
            atomic_write(&dir.join(&name), tail_plot(r).render().as_bytes())?;
            figures.push(name);
        }
        entries.push(TailSummaryEntry {
            kind: r.kind.to_string(),
            d: r.d,
            function: r.function.map(|f| f.name().to_string()),
            samples: r.samples,
            seed: r.stream.seed,
            counted_points: r.grid.iter().filter(|g| g.counted).count(),
            violations: r.violations,
            file,
        });
    }
    let summary = TailsSummary {
        total_violations: entries.iter().map(|e| e.violations).sum(),
        entries,
        figures,
    };
    write_json(&dir.join("tails-summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub law: IncrementLaw,
    pub delta: f64,
    pub variance: f64,
    pub scale: f64,
    pub c: f64,
    pub rho: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub result: CoverageResult,
    /// `2 delta + 3 sqrt(2 delta (1 - 2 delta) / R)`
    pub limit: f64,
    pub passed: bool,
}

pub fn emit_martingale(rows: &[CoverageRow], dir: &Path) -> Result<PathBuf> {
    let path = dir.join("martingale.csv");
    let header = [
        "law", "delta", "variance", "scale", "c", "rho", "steps", "paths", "crossing_fraction", "se", "limit",
        "passed",
    ]
    .map(String::from);
    let recs = rows.iter().map(|r| {
        vec![
            r.law.name().to_string(),
            fmt_f64(r.delta),
            fmt_f64(r.variance),
            fmt_f64(r.scale),
            fmt_f64(r.c),
            fmt_f64(r.rho),
            r.steps.to_string(),
            r.paths.to_string(),
            fmt_f64(r.result.crossing_fraction),
            fmt_f64(r.result.se),
            fmt_f64(r.limit),
            r.passed.to_string(),
        ]
    });
    atomic_write(&path, &csv_bytes(&path, header.to_vec(), recs)?)?;
    write_json(&dir.join("martingale-summary.json"), &rows)?;
    Ok(path)
}
