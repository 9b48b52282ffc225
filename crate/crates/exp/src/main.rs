use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use l1fed_exp::report::{read_json, RunSummary, TailsSummary};
use l1fed_exp::sweep::{fits, read_table};
use l1fed_exp::{execute, parse_config, ConfigError, CoverageRow, ExpError, Mode, Outcome};

/// Federated zero-order optimization experiments.
#[derive(Parser)]
#[command(name = "l1fed", version)]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, env = "L1FED_OUTPUT_ROOT", default_value = ".", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single federated optimization.
    Run(ModeArgs),
    /// Run a grid of (n, m, d, seed) cells.
    Sweep(ModeArgs),
    /// Compare empirical tails with their envelopes.
    Tails(ModeArgs),
    /// Check sub-gamma boundary coverage.
    Martingale(ModeArgs),
    /// Summarize the results in an output directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct ModeArgs {
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(args: &ModeArgs, mode: Mode) -> Result<l1fed_exp::ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = parse_config(&text)?;
    if cfg.mode != mode {
        return Err(ConfigError::invalid(
            "mode",
            format!("config is for `{}` but `{}` was requested", cfg.mode.name(), mode.name()),
        )
        .into());
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed)?;
    }
    Ok(cfg)
}

fn run_mode(root: &Path, args: &ModeArgs, mode: Mode) -> Result<()> {
    let cfg = load(args, mode)?;
    let dir = root.join(&cfg.output);
    log::info!("writing {} results to {}", mode.name(), dir.display());
    match execute(&cfg, &dir)? {
        Outcome::Run(s) => {
            println!(
                "run {}: cumulative regret {:.6e}, average {:.6e}, bound {:.6e}, {} bytes",
                s.hash, s.cumulative_regret, s.average_regret, s.bound.total, s.total_bytes
            );
        }
        Outcome::Sweep(o) => {
            let s = &o.summary;
            println!(
                "sweep: {} cells, {} computed, {} skipped, {} failed, {} bound violations",
                s.cells,
                s.computed,
                s.skipped,
                s.failures.len(),
                s.bound_violations
            );
            if let Some(f) = &s.fit_nm {
                println!("slope vs log(nm): {:.4} (rms {:.3e})", f.slope, f.residual_rms);
            }
            if let Some(f) = &s.fit_n_single_worker {
                println!("slope vs log(n), m = 1: {:.4} (rms {:.3e})", f.slope, f.residual_rms);
            }
            if !s.failures.is_empty() {
                bail!("{} sweep cells failed", s.failures.len());
            }
        }
        Outcome::Tails(s) => print_tails(&s),
        Outcome::Martingale(rows) => print_martingale(&rows),
    }
    Ok(())
}

fn print_tails(s: &TailsSummary) {
    for e in &s.entries {
        println!(
            "{:<12} d={:<4} {:<12} counted {:>2}/50 violations {}",
            e.kind,
            e.d,
            e.function.as_deref().unwrap_or("-"),
            e.counted_points,
            e.violations
        );
    }
    println!("total violations: {}", s.total_violations);
}

fn print_martingale(rows: &[CoverageRow]) {
    for r in rows {
        println!(
            "{:<18} delta={:<5} crossing {:.4} (se {:.4}) limit {:.4} {}",
            r.law.name(),
            r.delta,
            r.result.crossing_fraction,
            r.result.se,
            r.limit,
            if r.passed { "ok" } else { "EXCEEDED" }
        );
    }
}

fn report(dir: &Path) -> Result<()> {
    let mut found = false;
    let sweep = dir.join("sweep.csv");
    if sweep.exists() {
        found = true;
        let rows = read_table(&sweep)?;
        println!("sweep table: {} rows", rows.len());
        let (nm, n) = fits(&rows);
        if let Some(f) = nm {
            println!("slope vs log(nm): {:.4}", f.slope);
        }
        if let Some(f) = n {
            println!("slope vs log(n), m = 1: {:.4}", f.slope);
        }
    }
    let tails = dir.join("tails-summary.json");
    if tails.exists() {
        found = true;
        print_tails(&read_json::<TailsSummary>(&tails)?);
    }
    let mart = dir.join("martingale-summary.json");
    if mart.exists() {
        found = true;
        print_martingale(&read_json::<Vec<CoverageRow>>(&mart)?);
    }
    if !sweep.exists() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("run-") && n.ends_with(".json"))
            })
            .collect();
        entries.sort();
        for p in entries {
            found = true;
            let s: RunSummary = read_json(&p)?;
            println!(
                "run {} n={} m={} d={} seed={}: regret {:.6e} bound {:.6e}{}",
                s.hash,
                s.config.n,
                s.config.m,
                s.config.d,
                s.config.seed,
                s.cumulative_regret,
                s.bound.total,
                if s.bound_violated { " VIOLATED" } else { "" }
            );
        }
    }
    if !found {
        bail!("no results found in {}", dir.display());
    }
    Ok(())
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ConfigError>().is_some() || matches!(e.downcast_ref::<ExpError>(), Some(ExpError::Config(_)))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let root = &cli.output_root;
    let result = match &cli.command {
        Command::Run(a) => run_mode(root, a, Mode::Run),
        Command::Sweep(a) => run_mode(root, a, Mode::Sweep),
        Command::Tails(a) => run_mode(root, a, Mode::Tails),
        Command::Martingale(a) => run_mode(root, a, Mode::Martingale),
        Command::Report { dir } => report(&root.join(dir)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_validation(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
