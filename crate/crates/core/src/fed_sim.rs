//! Federated round engine.
//!
//! Each round the server broadcasts `x_t`; worker `j` draws a direction and
//! a context from stream `(seed, j, t)`, queries its objective at
//! `x_t +- h*zeta`, and replies with a [`WorkerMessage`]. The server decodes
//! the messages, averages them, takes a step of size `eta` and projects back
//! onto the feasible set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::estimator::{grad_estimate, two_point_queries, GradEstimate, McEstimate, McVector, SmoothedOracle, Target, WorkerMessage};
use crate::l1_geometry::{sample_l1_sphere, FeasibleSet};
use crate::objectives::{make_problem, Family, Minimizer, Problem, ProblemSpec};
use crate::rng::RngStream;
use crate::vecops::{axpy, dot, sub};

/// Tolerance used when checking that iterates stay feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Rounds.
    pub n: usize,
    /// Workers.
    pub m: usize,
    pub d: usize,
    pub h: f64,
    pub eta: f64,
    pub x1: Vec<f64>,
    pub delta: f64,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub set: FeasibleSet,
}

impl RunConfig {
    /// Checks the config and builds its problem. `eta = 0` is accepted (the
    /// iterate then never moves); negative values are not.
    pub fn validate(&self) -> Result<Problem> {
        if self.n == 0 {
            return Err(invalid("n", "need at least one round"));
        }
        if self.m == 0 {
            return Err(invalid("m", "need at least one worker"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid("h", "must be positive and finite"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be non-negative and finite"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", "must lie in (0, 1)"));
        }
        self.set.validate()?;
        let problem = make_problem(&self.problem)?;
        check_dim(self.d, problem.d)?;
        check_dim(self.d, self.set.dim())?;
        check_dim(self.d, self.x1.len())?;
        let distance = self.set.distance(&self.x1)?;
        if distance > FEASIBILITY_TOL {
            return Err(Error::Infeasible { distance });
        }
        Ok(problem)
    }
}

/// How worker computations within a round are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub t: usize,
    pub x: Vec<f64>,
    /// Aggregated gradient `g_t`.
    pub g: Vec<f64>,
    pub message_bytes: Vec<usize>,
    pub f_x: f64,
    pub regret: f64,
    pub g_norm_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: RunConfig,
    pub comparator: Minimizer,
    pub records: Vec<RoundRecord>,
    pub cumulative_regret: f64,
    pub average_regret: f64,
    pub total_bytes: usize,
    /// `f` at the mean of `x_1..x_n`.
    pub average_iterate_value: f64,
    pub average_iterate: Vec<f64>,
    /// `f(x_n)`.
    pub last_iterate_value: f64,
}

/// One worker's contribution for round `t` (1-based).
fn worker_message(
    problem: &Problem,
    cfg: &RunConfig,
    x: &[f64],
    j: usize,
    t: usize,
) -> Result<WorkerMessage> {
    let mut rng = RngStream::new(cfg.seed, j as u64, t as u64).rng();
    let zeta = sample_l1_sphere(cfg.d, &mut rng);
    let c = problem.draw_context(&mut rng);
    let (xp, xm) = two_point_queries(x, cfg.h, &zeta)?;
    let y = problem.eval_context(&c, &xp)?;
    let yp = problem.eval_context(&c, &xm)?;
    if !(y.is_finite() && yp.is_finite()) {
        return Err(Error::NonFinite {
            round: t,
            worker: j,
            what: format!("f_c(x +- h zeta) = ({y}, {yp})"),
        });
    }
    Ok(WorkerMessage::encode(y, yp, &zeta))
}

/// Runs the federated algorithm with sequential workers.
pub fn run_federated(cfg: &RunConfig) -> Result<RunTrace> {
    run_federated_with(cfg, Execution::Sequential)
}

pub fn run_federated_with(cfg: &RunConfig, exec: Execution) -> Result<RunTrace> {
    let problem = cfg.validate()?;
    let comparator = problem.minimizer(&cfg.set)?;
    let bytes = WorkerMessage::wire_size(cfg.d);
    run_loop(cfg, &problem, comparator, |x, t| {
        let messages: Vec<WorkerMessage> = match exec {
            Execution::Sequential => (0..cfg.m)
                .map(|j| worker_message(&problem, cfg, x, j, t))
                .collect::<Result<_>>()?,
            Execution::Parallel => (0..cfg.m)
                .into_par_iter()
                .map(|j| worker_message(&problem, cfg, x, j, t))
                .collect::<Result<_>>()?,
        };
        // Start from the first decoded vector rather than zeros so a single
        // worker's -0.0 components survive unchanged.
        let mut g = messages[0].decode(cfg.d, cfg.h)?.0;
        for msg in &messages[1..] {
            let gj = msg.decode(cfg.d, cfg.h)?;
            g.iter_mut().zip(&gj.0).for_each(|(a, b)| *a += b);
        }
        let m = cfg.m as f64;
        g.iter_mut().for_each(|v| *v /= m);
        Ok((g, vec![bytes; cfg.m]))
    })
}

/// Single-machine projected zero-order SGD without any message passing.
/// Uses the same random streams as worker 0, so for `m = 1` it must match
/// [`run_federated`] bit for bit.
pub fn run_direct(cfg: &RunConfig) -> Result<RunTrace> {
    if cfg.m != 1 {
        return Err(invalid("m", "the direct loop is single-worker"));
    }
    let problem = cfg.validate()?;
    let comparator = problem.minimizer(&cfg.set)?;
    run_loop(cfg, &problem, comparator, |x, t| {
        let mut rng = RngStream::new(cfg.seed, 0, t as u64).rng();
        let zeta = sample_l1_sphere(cfg.d, &mut rng);
        let c = problem.draw_context(&mut rng);
        let (xp, xm) = two_point_queries(x, cfg.h, &zeta)?;
        let y = problem.eval_context(&c, &xp)?;
        let yp = problem.eval_context(&c, &xm)?;
        let GradEstimate(g) = grad_estimate(cfg.h, y, yp, &zeta)?;
        Ok((g, Vec::new()))
    })
}

/// Shared outer loop: record, step, project. `round(x_t, t)` returns `g_t`
/// and the per-worker message sizes.
fn run_loop<F>(cfg: &RunConfig, problem: &Problem, comparator: Minimizer, mut round: F) -> Result<RunTrace>
where
    F: FnMut(&[f64], usize) -> Result<(Vec<f64>, Vec<usize>)>,
{
    let mut x = cfg.x1.clone();
    let mut records = Vec::with_capacity(cfg.n);
    let mut cumulative = 0.0;
    let mut total_bytes = 0;
    let mut x_sum = vec![0.0; cfg.d];
    for t in 1..=cfg.n {
        let f_x = problem.population_value(&x)?;
        if !f_x.is_finite() {
            return Err(Error::NonFinite {
                round: t,
                worker: 0,
                what: format!("f(x_t) = {f_x}"),
            });
        }
        let regret = f_x - comparator.value;
        cumulative += regret;
        x_sum.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        let (g, message_bytes) = round(&x, t)?;
        total_bytes += message_bytes.iter().sum::<usize>();
        let g_norm_sq = dot(&g, &g);
        let next = cfg.set.project(&axpy(&x, -cfg.eta, &g))?;
        records.push(RoundRecord {
            t,
            x: std::mem::replace(&mut x, next),
            g,
            message_bytes,
            f_x,
            regret,
            g_norm_sq,
        });
    }
    let average_iterate: Vec<f64> = x_sum.iter().map(|s| s / cfg.n as f64).collect();
    let average_iterate = cfg.set.project(&average_iterate)?;
    let last = &records.last().expect("n >= 1").x;
    Ok(RunTrace {
        config: cfg.clone(),
        average_iterate_value: problem.population_value(&average_iterate)?,
        last_iterate_value: problem.population_value(last)?,
        average_iterate,
        comparator,
        cumulative_regret: cumulative,
        average_regret: cumulative / cfg.n as f64,
        total_bytes,
        records,
    })
}

/// Smoothing radius and step size `h = sqrt((d+1)/n) / L`,
/// `eta = sqrt(m / (n d)) / L`.
pub fn default_hyperparams(lipschitz: f64, d: usize, n: usize, m: usize) -> (f64, f64) {
    let (d, n, m) = (d as f64, n as f64, m as f64);
    (((d + 1.0) / n).sqrt() / lipschitz, (m / (n * d)).sqrt() / lipschitz)
}

/// Constant in the variance event budget, `(2 / 0.003)^2`.
pub const VARIANCE_C1: f64 = (2.0 / 0.003) * (2.0 / 0.003);
/// Second constant in the variance event budget.
pub const VARIANCE_C2: f64 = 1448.0;

/// `2 log(1 + 211 n m)`.
pub fn deviation_l1(n: usize, m: usize) -> f64 {
    2.0 * (1.0 + 211.0 * n as f64 * m as f64).ln()
}

/// Term-by-term evaluation of the high-probability regret bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretBound {
    /// `D^2 / (2 eta)`
    pub stability: f64,
    /// `(2 L h / sqrt(d+1)) n`
    pub smoothing: f64,
    /// `L^2 eta n`
    pub step: f64,
    /// `eta n C1 L^2 d ((log(4n/delta)/m)^2 + C2/m log(4n/delta))`
    pub variance: f64,
    /// `4 D L sqrt(d) (sqrt(211/(nm) log(2 L1/delta)) + 19811/m log(2 L1/delta))`
    pub deviation: f64,
    pub total: f64,
}

/// The regret bound evaluated exactly as printed, with `L` and `D` supplied.
pub fn theoretical_regret_bound(cfg: &RunConfig, lipschitz: f64, diameter: f64) -> RegretBound {
    let (n, m, d) = (cfg.n as f64, cfg.m as f64, cfg.d as f64);
    let (l, dd, eta, h, delta) = (lipschitz, diameter, cfg.eta, cfg.h, cfg.delta);
    let stability = dd * dd / (2.0 * eta);
    let smoothing = 2.0 * l * h / (d + 1.0).sqrt() * n;
    let step = l * l * eta * n;
    let log4 = (4.0 * n / delta).ln();
    let variance = eta * n * VARIANCE_C1 * l * l * d * ((log4 / m).powi(2) + VARIANCE_C2 / m * log4);
    let log_l1 = (2.0 * deviation_l1(cfg.n, cfg.m) / delta).ln();
    let deviation = 4.0 * dd * l * d.sqrt() * ((211.0 / (n * m) * log_l1).sqrt() + 19811.0 / m * log_l1);
    RegretBound {
        stability,
        smoothing,
        step,
        variance,
        deviation,
        total: stability + smoothing + step + variance + deviation,
    }
}

/// The budgets of the variance event (`psi_n`) and deviation event
/// (`psi'_n`), evaluated as printed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventBudgets {
    pub psi_n: f64,
    pub psi_n_prime: f64,
}

pub fn deviation_and_variance_budgets(cfg: &RunConfig, lipschitz: f64, diameter: f64) -> EventBudgets {
    event_budgets(cfg.n, cfg.m, cfg.d, lipschitz, diameter, cfg.delta)
}

pub fn event_budgets(n: usize, m: usize, d: usize, lipschitz: f64, diameter: f64, delta: f64) -> EventBudgets {
    let (nf, mf, df) = (n as f64, m as f64, d as f64);
    let l = lipschitz;
    let log2n = (2.0 * nf / delta).ln();
    let psi_n = nf * VARIANCE_C1 * l * l * df * (log2n * log2n / (mf * mf) + VARIANCE_C2 / mf * log2n);
    let log_l1 = (deviation_l1(n, m) / delta).ln();
    let psi_n_prime =
        4.0 * diameter * l * df.sqrt() * ((211.0 / (nf * mf) * log_l1).sqrt() + 19811.0 / (nf * mf) * log_l1);
    EventBudgets { psi_n, psi_n_prime }
}

/// `grad F_h(x_t)` for every round of a trace: exact for linear objectives
/// (smoothing leaves an affine function unchanged), otherwise a Monte Carlo
/// estimate with fresh contexts from streams `(seed, u64::MAX, t)`.
pub fn smoothed_gradients(trace: &RunTrace, samples: usize, seed: u64) -> Result<Vec<McVector>> {
    let problem = make_problem(&trace.config.problem)?;
    if let Family::LinearNoise { a } = &problem.family {
        return Ok(vec![McVector::exact(a.clone()); trace.records.len()]);
    }
    let oracle = SmoothedOracle {
        target: Target::Contextual(&problem),
        h: trace.config.h,
        samples,
    };
    trace
        .records
        .iter()
        .map(|r| oracle.gradient(&r.x, RngStream::new(seed, u64::MAX, r.t as u64)))
        .collect()
}

/// `sum_t |g_t - grad F_h(x_t)|^2`.
pub fn variance_sum(trace: &RunTrace, grads: &[McVector]) -> Result<f64> {
    check_dim(trace.records.len(), grads.len())?;
    Ok(trace
        .records
        .iter()
        .zip(grads)
        .map(|(r, g)| {
            let diff = sub(&r.g, &g.mean);
            dot(&diff, &diff)
        })
        .sum())
}

/// `|sum_t <g_t - grad F_h(x_t), x_t - x_ref>|` with the Monte Carlo
/// uncertainty of the gradient estimates propagated to a standard error.
pub fn measure_deviation(trace: &RunTrace, grads: &[McVector], x_ref: &[f64]) -> Result<McEstimate> {
    check_dim(trace.records.len(), grads.len())?;
    check_dim(trace.config.d, x_ref.len())?;
    let mut sum = 0.0;
    let mut var = 0.0;
    for (r, g) in trace.records.iter().zip(grads) {
        let offset = sub(&r.x, x_ref);
        let diff = sub(&r.g, &g.mean);
        sum += dot(&diff, &offset);
        var += g
            .std_error
            .iter()
            .zip(&offset)
            .map(|(se, o)| (se * o) * (se * o))
            .sum::<f64>();
    }
    Ok(McEstimate {
        mean: sum.abs(),
        std_error: var.sqrt(),
    })
}
