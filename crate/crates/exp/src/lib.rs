//! Experiment orchestration for `l1fed-core`: config parsing, sweeps,
//! rate fits and report emission. The `l1fed` binary is a thin wrapper.

// `!(a > b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod plot;
pub mod ratefit;
pub mod report;
pub mod sweep;

use std::path::Path;

use l1fed_core::{boundary_coverage_experiment, run_federated_with, tail_experiment, Execution, RngStream};

pub use config::{parse_config, Cell, ExperimentConfig, Mode};
pub use error::{ConfigError, ExpError, Result};
pub use ratefit::{fit_rate_slope, RateFit, Scale};
pub use report::{emit_martingale, emit_run, emit_tails, CoverageRow, RunSummary, TailsSummary};
pub use sweep::{run_sweep, SweepOutcome, SweepRow};

/// What a mode produced.
#[derive(Debug)]
pub enum Outcome {
    Run(Box<RunSummary>),
    Sweep(SweepOutcome),
    Tails(TailsSummary),
    Martingale(Vec<CoverageRow>),
}

pub fn run_single(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let cell = cfg.cells()?[0];
    let run = cfg.run_config(cell)?;
    let trace = run_federated_with(&run, Execution::Parallel)?;
    emit_run(&trace, dir, cfg.plot)
}

/// Tail experiments for every (kind, d) pair, and every test function for
/// the kinds that take one. Experiment `k` uses stream `(seed, k, 0)`.
pub fn run_tails(cfg: &ExperimentConfig, dir: &Path) -> Result<TailsSummary> {
    let plan = cfg
        .tails
        .as_ref()
        .ok_or(ConfigError::Missing("tails.kinds"))?;
    let mut reports = Vec::new();
    for &kind in &plan.kinds {
        for &d in &plan.dims {
            let fns: Vec<Option<l1fed_core::TestFunction>> = if kind.uses_function() {
                plan.functions.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for f in fns {
                let stream = RngStream::new(cfg.seed, reports.len() as u64, 0);
                reports.push(tail_experiment(kind, d, plan.samples, f, stream)?);
            }
        }
    }
    emit_tails(&reports, dir, cfg.plot)
}

/// Boundary coverage for every (law, delta) pair.
pub fn run_martingale(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<CoverageRow>> {
    let plan = cfg
        .martingale
        .as_ref()
        .ok_or(ConfigError::Missing("martingale.laws"))?;
    let mut rows = Vec::new();
    for &law in &plan.laws {
        for &delta in &plan.deltas {
            let (spec, boundary) = plan.instance(law, delta)?;
            let stream = RngStream::new(cfg.seed, rows.len() as u64, 0);
            let result = boundary_coverage_experiment(&spec, &boundary, stream)?;
            let p = (2.0 * delta).min(1.0);
            let limit = 2.0 * delta + 3.0 * (p * (1.0 - p) / spec.paths as f64).sqrt();
            rows.push(CoverageRow {
                law,
                delta,
                variance: spec.variance,
                scale: spec.scale,
                c: boundary.c,
                rho: boundary.rho,
                steps: spec.steps,
                paths: spec.paths,
                seed: cfg.seed,
                passed: result.crossing_fraction <= limit,
                result,
                limit,
            });
        }
    }
    emit_martingale(&rows, dir)?;
    Ok(rows)
}

/// Runs the config's mode, writing results under `dir`.
pub fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    Ok(match cfg.mode {
        Mode::Run => Outcome::Run(Box::new(run_single(cfg, dir)?)),
        Mode::Sweep => Outcome::Sweep(run_sweep(cfg, dir)?),
        Mode::Tails => Outcome::Tails(run_tails(cfg, dir)?),
        Mode::Martingale => Outcome::Martingale(run_martingale(cfg, dir)?),
    })
}
