//! Empirical checks of explicit-constant concentration bounds.
//!
//! Three groups of statements are covered:
//!
//! * tail envelopes for functionals of a standard Laplace vector `x` with
//!   `S = |x|_1` (the ratio `|x|_2 / S`, the average `S/d`, Lipschitz
//!   functions of `x/S`, and the gap between `f(x/S)` and `f(x/d)`);
//! * the time-uniform sub-gamma martingale boundary;
//! * moment bounds for the two-point gradient estimator.
//!
//! Every experiment is driven by an [`RngStream`] and reproduces exactly.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{grad_estimate, two_point_queries, McEstimate, SmoothedOracle, Target};
use crate::l1_geometry::{fill_laplace, sample_l1_ball, sample_l1_sphere};
use crate::objectives::Problem;
use crate::rng::{map_chunks, RngStream};
use crate::vecops::norm2;

/// Minimum sample count for a tail experiment.
pub const MIN_TAIL_SAMPLES: usize = 10_000;
/// Points per tail grid.
pub const GRID_POINTS: usize = 50;
/// Standard errors of slack allowed before a grid point counts as violated.
pub const SE_SLACK: f64 = 3.0;

/// Which printed tail bound to test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeKind {
    /// `P(|x|_2/S > r) <= 17.1 exp(-0.011 r d)` for `d > 1`, `r >= 16/sqrt(d)`.
    Ratio,
    /// `P(|S/d - 1| > r) <= 2 exp(-d min(r, r^2) / 16)`.
    Avg,
    /// `P(|S/d - 1| > r) <= 2 exp(-sqrt(d) r / 16)`.
    AvgSqrt,
    /// `P(|f(x/S) - E f(x/S)| > r) <= 361 exp(-0.003 r d)` for 1-Lipschitz `f`.
    Lipschitz,
    /// `P(|f(x/S) - f(x/d)| > r) <= 88 exp(-0.018 r d)` for `0 < r <= 2`.
    NormToAvg,
}

impl EnvelopeKind {
    pub const ALL: [EnvelopeKind; 5] = [
        EnvelopeKind::Ratio,
        EnvelopeKind::Avg,
        EnvelopeKind::AvgSqrt,
        EnvelopeKind::Lipschitz,
        EnvelopeKind::NormToAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvelopeKind::Ratio => "ratio",
            EnvelopeKind::Avg => "avg",
            EnvelopeKind::AvgSqrt => "avg-sqrt",
            EnvelopeKind::Lipschitz => "lipschitz",
            EnvelopeKind::NormToAvg => "norm-to-avg",
        }
    }

    /// Whether the statistic involves a test function.
    pub fn uses_function(self) -> bool {
        matches!(self, EnvelopeKind::Lipschitz | EnvelopeKind::NormToAvg)
    }

    /// Range of `r` over which the bound is stated and the statistic can
    /// exceed `r`, as `(lo, hi)`.
    pub fn grid_range(self, d: usize) -> Result<(f64, f64)> {
        if d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        let df = d as f64;
        Ok(match self {
            EnvelopeKind::Ratio => {
                if d < 2 {
                    return Err(Error::OutOfRange(
                        "ratio bound needs d > 1 and r >= 16/sqrt(d); |x|_2/S <= 1 leaves no admissible grid".into(),
                    ));
                }
                let lo = 16.0 / df.sqrt();
                (lo, (2.0 * lo).max(1.0))
            }
            EnvelopeKind::Avg => {
                // Up to where the envelope reaches 1e-6.
                let k = 16.0 * (2e6f64).ln() / df;
                (0.01, k.max(k.sqrt()))
            }
            EnvelopeKind::AvgSqrt => (0.01, 16.0 * (2e6f64).ln() / df.sqrt()),
            // A 1-Lipschitz function varies by at most 2 on the l1 sphere.
            EnvelopeKind::Lipschitz | EnvelopeKind::NormToAvg => (0.01, 2.0),
        })
    }

    fn check_validity(self, r: f64, d: usize) -> Result<()> {
        if !(r > 0.0) || d == 0 {
            return Err(Error::OutOfRange(format!("need r > 0 and d >= 1 (r = {r}, d = {d})")));
        }
        match self {
            EnvelopeKind::Ratio if d < 2 || r < 16.0 / (d as f64).sqrt() => Err(Error::OutOfRange(format!(
                "ratio bound holds for d > 1 and r >= 16/sqrt(d) (r = {r}, d = {d})"
            ))),
            EnvelopeKind::NormToAvg if r > 2.0 => {
                Err(Error::OutOfRange(format!("norm-to-avg bound holds for r <= 2 (r = {r})")))
            }
            _ => Ok(()),
        }
    }

    /// The printed bound, unclamped.
    pub fn raw_envelope(self, r: f64, d: usize) -> Result<f64> {
        self.check_validity(r, d)?;
        let df = d as f64;
        Ok(match self {
            EnvelopeKind::Ratio => 17.1 * (-0.011 * r * df).exp(),
            EnvelopeKind::Avg => 2.0 * (-df * r.min(r * r) / 16.0).exp(),
            EnvelopeKind::AvgSqrt => 2.0 * (-df.sqrt() * r / 16.0).exp(),
            EnvelopeKind::Lipschitz => 361.0 * (-0.003 * r * df).exp(),
            EnvelopeKind::NormToAvg => 88.0 * (-0.018 * r * df).exp(),
        })
    }
}

impl fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvelopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvelopeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid("kind", format!("unknown envelope kind `{s}`")))
    }
}

/// The printed envelope clamped at 1.
pub fn envelope(kind: EnvelopeKind, r: f64, d: usize) -> Result<f64> {
    Ok(kind.raw_envelope(r, d)?.min(1.0))
}

/// 1-Lipschitz test functions on the l1 sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    /// `|z|_2`
    L2Norm,
    /// `z_1`
    FirstCoord,
    /// `max_i z_i`
    MaxCoord,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [TestFunction::L2Norm, TestFunction::FirstCoord, TestFunction::MaxCoord];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::L2Norm => "l2-norm",
            TestFunction::FirstCoord => "first-coord",
            TestFunction::MaxCoord => "max-coord",
        }
    }

    pub fn eval(self, z: &[f64]) -> f64 {
        match self {
            TestFunction::L2Norm => norm2(z),
            TestFunction::FirstCoord => z[0],
            TestFunction::MaxCoord => z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestFunction::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| invalid("function", format!("unknown test function `{s}`")))
    }
}

/// One point of an empirical tail curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub r: f64,
    /// Fraction of samples strictly greater than `r`.
    pub fraction: f64,
    /// Binomial standard error `sqrt(p (1 - p) / N)`.
    pub se: f64,
}

/// Empirical survival function of `samples` on an ascending grid.
pub fn empirical_tail(samples: &[f64], r_grid: &[f64]) -> Result<Vec<TailPoint>> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if r_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("r_grid", "must be sorted ascending"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(r_grid
        .iter()
        .map(|&r| {
            let above = sorted.len() - sorted.partition_point(|&s| s <= r);
            let p = above as f64 / n;
            TailPoint {
                r,
                fraction: p,
                se: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect())
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 || lo == hi {
        return vec![lo; count.min(1)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub r: f64,
    pub empirical: f64,
    pub se: f64,
    /// Envelope clamped at 1.
    pub envelope: f64,
    /// Whether the point takes part in violation counting (envelope < 1).
    pub counted: bool,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub kind: EnvelopeKind,
    pub d: usize,
    pub samples: usize,
    pub function: Option<TestFunction>,
    pub stream: RngStream,
    /// Standard error of the plug-in mean for the Lipschitz statistic.
    pub mean_se: Option<f64>,
    pub grid: Vec<TailRow>,
    pub violations: usize,
}

/// Lane used for the independent batch that estimates `E f(x/S)`.
const MEAN_BATCH_LANE: u64 = 0xFFFF_FFF0;

/// Samples the statistic for `kind` and compares its empirical tail with the
/// envelope on a log grid.
///
/// For the Lipschitz kind, `E f(x/S)` is replaced by the mean of an
/// independent batch of the same size; the envelope is then evaluated at
/// `r - 3 * se(mean)` so the plug-in error cannot produce a violation.
/// `stream` should be a top-level stream (not a child).
pub fn tail_experiment(
    kind: EnvelopeKind,
    d: usize,
    samples: usize,
    function: Option<TestFunction>,
    stream: RngStream,
) -> Result<TailReport> {
    if samples < MIN_TAIL_SAMPLES {
        return Err(invalid("samples", format!("need at least {MIN_TAIL_SAMPLES}, got {samples}")));
    }
    let (lo, hi) = kind.grid_range(d)?;
    let function = kind.uses_function().then(|| function.unwrap_or(TestFunction::L2Norm));
    let df = d as f64;

    let draw = |s: RngStream, stat: &(dyn Fn(&[f64], f64) -> f64 + Sync)| -> Vec<f64> {
        map_chunks(s, samples, |rng, count| {
            let mut x = vec![0.0; d];
            (0..count)
                .map(|_| {
                    fill_laplace(rng, &mut x);
                    let s: f64 = x.iter().map(|v| v.abs()).sum();
                    stat(&x, s)
                })
                .collect::<Vec<f64>>()
        })
        .concat()
    };
    let on_sphere = |x: &[f64], s: f64| -> Vec<f64> { x.iter().map(|v| v / s).collect() };

    let (values, mean_se) = match kind {
        EnvelopeKind::Ratio => (draw(stream, &|x, s| norm2(x) / s), None),
        EnvelopeKind::Avg | EnvelopeKind::AvgSqrt => (draw(stream, &|_, s| (s / df - 1.0).abs()), None),
        EnvelopeKind::Lipschitz => {
            let f = function.expect("set above");
            let reference = draw(stream.child(MEAN_BATCH_LANE), &|x, s| f.eval(&on_sphere(x, s)));
            let n = reference.len() as f64;
            let mean = reference.iter().sum::<f64>() / n;
            let var = reference.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let raw = draw(stream, &|x, s| f.eval(&on_sphere(x, s)));
            (raw.into_iter().map(|v| (v - mean).abs()).collect(), Some((var / n).sqrt()))
        }
        EnvelopeKind::NormToAvg => {
            let f = function.expect("set above");
            (
                draw(stream, &|x, s| {
                    let scaled: Vec<f64> = x.iter().map(|v| v / df).collect();
                    (f.eval(&on_sphere(x, s)) - f.eval(&scaled)).abs()
                }),
                None,
            )
        }
    };

    let grid = log_grid(lo, hi, GRID_POINTS);
    let tail = empirical_tail(&values, &grid)?;
    let mut rows = Vec::with_capacity(tail.len());
    for p in tail {
        let shift = mean_se.map_or(0.0, |se| SE_SLACK * se);
        let r_env = (p.r - shift).max(f64::MIN_POSITIVE);
        // The shifted radius can fall below the ratio/norm-to-avg validity
        // range only for those kinds, which never use a shift.
        let envelope = envelope(kind, r_env, d)?;
        let counted = envelope < 1.0;
        let violated = counted && p.fraction - SE_SLACK * p.se > envelope;
        rows.push(TailRow {
            r: p.r,
            empirical: p.fraction,
            se: p.se,
            envelope,
            counted,
            violated,
        });
    }
    let violations = rows.iter().filter(|r| r.violated).count();
    Ok(TailReport {
        kind,
        d,
        samples,
        function,
        stream,
        mean_se,
        grid: rows,
        violations,
    })
}

/// Time-uniform boundary for a sub-gamma process with scale `c`:
/// `4 sqrt(V log(H/delta)) + 11 (c + rho) log(H/delta)`,
/// `H = log(1 + V/rho^2) + 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubGammaBoundary {
    pub c: f64,
    pub rho: f64,
    pub delta: f64,
}

impl SubGammaBoundary {
    pub fn new(c: f64, rho: f64, delta: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid("c", "must be finite and >= 0"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid("rho", "must be positive and finite"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", "must lie in (0, 1)"));
        }
        Ok(Self { c, rho, delta })
    }

    pub fn value(&self, v: f64) -> f64 {
        let h = (1.0 + v / (self.rho * self.rho)).ln() + 2.0;
        let log_term = (h / self.delta).ln();
        4.0 * (v * log_term).sqrt() + 11.0 * (self.c + self.rho) * log_term
    }
}

pub fn subgamma_boundary(b: &SubGammaBoundary, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(invalid("V", "accumulated variance must be >= 0"));
    }
    Ok(b.value(v))
}

/// Increment distributions with a known sub-gamma certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementLaw {
    /// `+-b` with equal probability, `b = sqrt(v)`.
    ///
    /// A mean-zero variable with `|X| <= b` and variance `v` satisfies
    /// Bernstein's bound `log E e^{lX} <= v l^2 / (2 (1 - b l / 3))` for
    /// `0 <= l < 3/b`, so the walk with `V_t = t v` is sub-gamma with scale
    /// `b / 3` (and any larger scale).
    BoundedSymmetric,
    /// `G - k c` with `G ~ Gamma(shape k, scale c)` and `k = v / c^2`.
    ///
    /// For `0 <= l < 1/c`, `log E e^{lX} = k(-log(1 - cl) - cl)` and
    /// `-log(1 - u) - u <= u^2 / (2 (1 - u))`, which gives the sub-gamma
    /// bound with variance `k c^2 = v` and scale `c`. The lower tail is
    /// sub-Gaussian with the same variance, which is stronger.
    CenteredGamma,
}

impl IncrementLaw {
    pub fn name(self) -> &'static str {
        match self {
            IncrementLaw::BoundedSymmetric => "bounded-symmetric",
            IncrementLaw::CenteredGamma => "centered-gamma",
        }
    }
}

impl FromStr for IncrementLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounded-symmetric" => Ok(IncrementLaw::BoundedSymmetric),
            "centered-gamma" => Ok(IncrementLaw::CenteredGamma),
            other => Err(invalid("law", format!("unknown increment law `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSpec {
    pub law: IncrementLaw,
    /// Per-step conditional variance.
    pub variance: f64,
    /// Declared sub-gamma scale of the increments.
    pub scale: f64,
    pub steps: usize,
    pub paths: usize,
}

impl MartingaleSpec {
    /// Smallest scale for which the law's certificate holds.
    pub fn certified_scale(&self) -> f64 {
        match self.law {
            IncrementLaw::BoundedSymmetric => self.variance.sqrt() / 3.0,
            IncrementLaw::CenteredGamma => self.scale,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(invalid("variance", "must be finite and >= 0"));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(invalid("scale", "must be finite and >= 0"));
        }
        if self.steps == 0 || self.paths == 0 {
            return Err(invalid("steps", "steps and paths must be positive"));
        }
        if self.law == IncrementLaw::CenteredGamma && self.variance > 0.0 && self.scale == 0.0 {
            return Err(invalid("scale", "a centered gamma law with positive variance needs scale > 0"));
        }
        if self.scale < self.certified_scale() * (1.0 - 1e-12) {
            return Err(invalid(
                "scale",
                format!(
                    "declared scale {} is below the certified scale {} of the {} law",
                    self.scale,
                    self.certified_scale(),
                    self.law.name()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub crossing_fraction: f64,
    pub se: f64,
    pub crossings: usize,
    pub paths: usize,
}

/// Simulates independent martingales and counts the paths whose `|S_t|`
/// exceeds the boundary at `V_t = t v` for some `t <= T`.
pub fn boundary_coverage_experiment(
    spec: &MartingaleSpec,
    boundary: &SubGammaBoundary,
    stream: RngStream,
) -> Result<CoverageResult> {
    spec.validate()?;
    if spec.scale > boundary.c {
        return Err(invalid(
            "c",
            format!("boundary scale {} is below the process scale {}", boundary.c, spec.scale),
        ));
    }
    let limits: Vec<f64> = (1..=spec.steps)
        .map(|t| boundary.value(t as f64 * spec.variance))
        .collect();
    let v = spec.variance;
    let gamma = match spec.law {
        IncrementLaw::CenteredGamma if v > 0.0 => {
            let c = spec.scale;
            Some((Gamma::new(v / (c * c), c).map_err(|e| invalid("scale", e.to_string()))?, v / c))
        }
        _ => None,
    };
    let b = v.sqrt();
    let crossed: Vec<bool> = (0..spec.paths)
        .map(|p| {
            if v == 0.0 {
                return false;
            }
            let mut rng = stream.child(p as u64).rng();
            let mut s = 0.0;
            for limit in &limits {
                s += match (&gamma, spec.law) {
                    (Some((g, mean)), _) => g.sample(&mut rng) - mean,
                    (None, _) => {
                        if rng.gen::<bool>() {
                            b
                        } else {
                            -b
                        }
                    }
                };
                if s.abs() > *limit {
                    return true;
                }
            }
            false
        })
        .collect();
    let crossings = crossed.iter().filter(|c| **c).count();
    let n = spec.paths as f64;
    let p = crossings as f64 / n;
    Ok(CoverageResult {
        crossing_fraction: p,
        se: (p * (1.0 - p) / n).sqrt(),
        crossings,
        paths: spec.paths,
    })
}

/// `18 (1 + sqrt 2)^2 L^2 d`, the second-moment bound for one estimate.
pub fn second_moment_bound(lipschitz: f64, d: usize) -> f64 {
    18.0 * (1.0 + std::f64::consts::SQRT_2).powi(2) * lipschitz * lipschitz * d as f64
}

/// `211 L^2 d`, the bound on `E |g - grad F_h|^2`.
pub fn centered_second_moment_bound(lipschitz: f64, d: usize) -> f64 {
    211.0 * lipschitz * lipschitz * d as f64
}

/// `(2L)^p / 2 * (361 p! (sqrt(d) / 0.003)^p + 1)`.
pub fn p_moment_bound(p: u32, lipschitz: f64, d: usize) -> f64 {
    let fact: f64 = (1..=p).map(f64::from).product();
    (2.0 * lipschitz).powi(p as i32) / 2.0 * (361.0 * fact * ((d as f64).sqrt() / 0.003).powi(p as i32) + 1.0)
}

/// `E |g|^2` for one worker's estimate at `x`, with fresh directions and
/// contexts.
pub fn grad_second_moment(problem: &Problem, x: &[f64], h: f64, samples: usize, stream: RngStream) -> Result<McEstimate> {
    let oracle = SmoothedOracle {
        target: Target::Contextual(problem),
        h,
        samples,
    };
    moment_of_estimates(&oracle, x, &vec![0.0; problem.d], 2, stream)
}

/// Mean and standard error of `|g - center|^p` over fresh estimates `g`.
fn moment_of_estimates(
    oracle: &SmoothedOracle,
    x: &[f64],
    center: &[f64],
    p: u32,
    stream: RngStream,
) -> Result<McEstimate> {
    let d = x.len();
    if oracle.samples < 2 {
        return Err(invalid("samples", "need at least 2"));
    }
    let Target::Contextual(problem) = oracle.target else {
        return Err(invalid("target", "moment checks use contextual draws"));
    };
    crate::error::check_dim(problem.d, d)?;
    let parts = map_chunks(stream, oracle.samples, |rng, count| {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..count {
            let zeta = sample_l1_sphere(d, rng);
            let c = problem.draw_context(rng);
            let (xp, xm) = two_point_queries(x, oracle.h, &zeta).expect("validated h");
            let y = problem.eval_context_unchecked(&c.0, &xp);
            let yp = problem.eval_context_unchecked(&c.0, &xm);
            let g = grad_estimate(oracle.h, y, yp, &zeta).expect("validated h");
            let dev: f64 = g.0.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let v = dev.powi(p as i32);
            sum += v;
            sum_sq += v * v;
        }
        (sum, sum_sq)
    });
    let n = oracle.samples as f64;
    let (sum, sum_sq) = parts.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub x: Vec<f64>,
    /// `E |g|^2`
    pub second_moment: McEstimate,
    /// `E |g - grad F_h(x)|^2`
    pub centered_second_moment: McEstimate,
    /// `E |g - grad F_h(x)|^p`
    pub centered_p_moment: McEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: u32,
    pub d: usize,
    pub h: f64,
    pub lipschitz: f64,
    pub samples: usize,
    pub p_moment_bound: f64,
    pub second_moment_bound: f64,
    pub centered_second_moment_bound: f64,
    pub points: Vec<MomentPoint>,
    pub passed: bool,
}

/// Moment checks for the gradient estimator at three random points of the
/// unit l1 ball.
///
/// `grad F_h(x)` is estimated from an independent batch of `samples`
/// estimates; the moments are then averaged over a second batch.
pub fn moment_check(p: u32, problem: &Problem, h: f64, samples: usize, stream: RngStream) -> Result<MomentReport> {
    if !(2..=8).contains(&p) {
        return Err(invalid("p", format!("moment order must be in 2..=8, got {p}")));
    }
    if samples < 100_000 {
        return Err(invalid("samples", format!("need at least 100000, got {samples}")));
    }
    let d = problem.d;
    let l = problem.lipschitz;
    let oracle = SmoothedOracle {
        target: Target::Contextual(problem),
        h,
        samples,
    };
    let mut point_rng = stream.child(0).rng();
    let mut points = Vec::with_capacity(3);
    for k in 0..3u64 {
        let x = sample_l1_ball(d, &mut point_rng);
        let base = RngStream::new(stream.seed, stream.worker, stream.round.wrapping_add(1 + 4 * k));
        let grad = oracle.gradient(&x, base)?.mean;
        let zero = vec![0.0; d];
        let second = moment_of_estimates(&oracle, &x, &zero, 2, base.child(1))?;
        let centered = moment_of_estimates(&oracle, &x, &grad, 2, base.child(2))?;
        let centered_p = moment_of_estimates(&oracle, &x, &grad, p, base.child(3))?;
        points.push(MomentPoint {
            x,
            second_moment: second,
            centered_second_moment: centered,
            centered_p_moment: centered_p,
        });
    }
    let pb = p_moment_bound(p, l, d);
    let sb = second_moment_bound(l, d);
    let cb = centered_second_moment_bound(l, d);
    let passed = points.iter().all(|pt| {
        pt.centered_p_moment.mean <= pb && pt.second_moment.mean <= sb && pt.centered_second_moment.mean <= cb
    });
    Ok(MomentReport {
        p,
        d,
        h,
        lipschitz: l,
        samples,
        p_moment_bound: pb,
        second_moment_bound: sb,
        centered_second_moment_bound: cb,
        points,
        passed,
    })
}
