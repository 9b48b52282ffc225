//! Experiment configuration.
//!
//! Configs are TOML documents with flat dotted keys:
//!
//! ```toml
//! mode = "sweep"
//! seed = 7
//! n = 512
//! m = 4
//! d = 5
//! x1 = "e1"
//! problem.family = "shifted-norm"
//! problem.theta = 0.0
//! problem.sigma = 0.5
//! set.kind = "euclidean-ball"
//! set.radius = 1.0
//! sweep.n = [64, 128, 256]
//! sweep.seeds = 20
//! ```
//!
//! Vector-valued keys accept a scalar (broadcast to length `d`), a list, or
//! `"e<k>"` for the k-th standard basis vector (1-based). Unknown keys are
//! rejected.

use std::path::PathBuf;

use l1fed_core::{
    default_hyperparams, make_problem, EnvelopeKind, Family, FeasibleSet, IncrementLaw, ProblemSpec, RunConfig,
    TestFunction,
};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Run,
    Sweep,
    Tails,
    Martingale,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Sweep => "sweep",
            Mode::Tails => "tails",
            Mode::Martingale => "martingale",
        }
    }
}

/// A vector given as a scalar, a list, or a basis vector name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    List(Vec<f64>),
    Named(String),
}

impl VectorSpec {
    pub fn resolve(&self, field: &'static str, d: usize) -> Result<Vec<f64>, ConfigError> {
        match self {
            VectorSpec::Scalar(v) => Ok(vec![*v; d]),
            VectorSpec::List(v) if v.len() == d => Ok(v.clone()),
            VectorSpec::List(v) => Err(ConfigError::invalid(
                field,
                format!("has {} entries but d = {d}", v.len()),
            )),
            VectorSpec::Named(name) => {
                let k = name
                    .strip_prefix('e')
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|k| (1..=d).contains(k))
                    .ok_or_else(|| {
                        ConfigError::invalid(field, format!("`{name}` is not a basis vector e1..e{d}"))
                    })?;
                let mut v = vec![0.0; d];
                v[k - 1] = 1.0;
                Ok(v)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub family: String,
    #[serde(default)]
    pub sigma: f64,
    pub a: Option<VectorSpec>,
    pub theta: Option<VectorSpec>,
    pub slopes: Option<Vec<Vec<f64>>>,
    pub offsets: Option<Vec<f64>>,
    /// Number of random affine pieces when `slopes` is not given.
    pub pieces: Option<usize>,
    /// Seed for randomly generated family parameters.
    pub param_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSection {
    pub kind: String,
    pub lo: Option<VectorSpec>,
    pub hi: Option<VectorSpec>,
    pub center: Option<VectorSpec>,
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedList {
    Count(u64),
    List(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n: Option<Vec<usize>>,
    pub m: Option<Vec<usize>>,
    pub d: Option<Vec<usize>>,
    /// Either a list of seeds or a count `k`, meaning `seed .. seed + k`.
    pub seeds: Option<SeedList>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsSection {
    pub kinds: Option<Vec<EnvelopeKind>>,
    pub d: Option<Vec<usize>>,
    pub samples: Option<usize>,
    pub functions: Option<Vec<TestFunction>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSection {
    pub laws: Option<Vec<IncrementLaw>>,
    pub variance: Option<f64>,
    /// Declared increment scale; defaults to the law's certified scale
    /// (0.5 for the gamma law).
    pub scale: Option<f64>,
    pub steps: Option<usize>,
    pub paths: Option<usize>,
    pub deltas: Option<Vec<f64>>,
    /// Boundary scale; defaults to the increment scale.
    pub c: Option<f64>,
    pub rho: Option<f64>,
}

/// The document as written, before validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub mode: Mode,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub d: Option<usize>,
    pub h: Option<f64>,
    pub eta: Option<f64>,
    pub delta: Option<f64>,
    pub x1: Option<VectorSpec>,
    pub output: Option<PathBuf>,
    pub plot: Option<bool>,
    /// Concurrent sweep cells.
    pub workers: Option<usize>,
    pub problem: Option<ProblemSection>,
    pub set: Option<SetSection>,
    pub sweep: Option<SweepSection>,
    pub tails: Option<TailsSection>,
    pub martingale: Option<MartingaleSection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailsPlan {
    pub kinds: Vec<EnvelopeKind>,
    pub dims: Vec<usize>,
    pub samples: usize,
    pub functions: Vec<TestFunction>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MartingalePlan {
    pub laws: Vec<IncrementLaw>,
    pub variance: f64,
    pub scale: Option<f64>,
    pub steps: usize,
    pub paths: usize,
    pub deltas: Vec<f64>,
    pub c: Option<f64>,
    pub rho: f64,
}

/// One point of the sweep grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output: PathBuf,
    pub plot: bool,
    pub workers: usize,
    pub raw: RawConfig,
    pub tails: Option<TailsPlan>,
    pub martingale: Option<MartingalePlan>,
}

pub const DEFAULT_DELTA: f64 = 0.1;

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    ExperimentConfig::from_raw(raw)
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig {
            mode: raw.mode,
            seed: raw.seed.unwrap_or(0),
            output: raw.output.clone().unwrap_or_else(|| PathBuf::from("out")),
            plot: raw.plot.unwrap_or(false),
            workers: raw.workers.unwrap_or(1),
            raw,
            tails: None,
            martingale: None,
        };
        if cfg.workers == 0 {
            return Err(ConfigError::invalid("workers", "must be at least 1"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the base seed and revalidates.
    pub fn with_seed(mut self, seed: u64) -> Result<Self, ConfigError> {
        self.seed = seed;
        self.raw.seed = Some(seed);
        self.validate()?;
        Ok(self)
    }

    fn validate(&mut self) -> Result<(), ConfigError> {
        match self.mode {
            Mode::Run => {
                self.run_config(self.base_cell()?)?;
            }
            Mode::Sweep => {
                for cell in self.cells()? {
                    self.run_config(cell)?;
                }
            }
            Mode::Tails => self.tails = Some(self.tails_plan()?),
            Mode::Martingale => self.martingale = Some(self.martingale_plan()?),
        }
        Ok(())
    }

    fn base_cell(&self) -> Result<Cell, ConfigError> {
        Ok(Cell {
            n: self.raw.n.ok_or(ConfigError::Missing("n"))?,
            m: self.raw.m.ok_or(ConfigError::Missing("m"))?,
            d: self.raw.d.ok_or(ConfigError::Missing("d"))?,
            seed: self.seed,
        })
    }

    /// The cartesian product of the sweep axes, in (n, m, d, seed) order.
    /// Missing axes fall back to the scalar keys.
    pub fn cells(&self) -> Result<Vec<Cell>, ConfigError> {
        let sweep = self.raw.sweep.clone().unwrap_or(SweepSection {
            n: None,
            m: None,
            d: None,
            seeds: None,
        });
        let axis = |list: Option<Vec<usize>>, scalar: Option<usize>, name: &'static str| {
            match (list, scalar) {
                (Some(l), _) if l.is_empty() => Err(ConfigError::invalid(name, "axis is empty")),
                (Some(l), _) => Ok(l),
                (None, Some(v)) => Ok(vec![v]),
                (None, None) => Err(ConfigError::Missing(name)),
            }
        };
        let ns = axis(sweep.n, self.raw.n, "sweep.n")?;
        let ms = axis(sweep.m, self.raw.m, "sweep.m")?;
        let ds = axis(sweep.d, self.raw.d, "sweep.d")?;
        let seeds = match sweep.seeds {
            None => vec![self.seed],
            Some(SeedList::Count(0)) => return Err(ConfigError::invalid("sweep.seeds", "count must be positive")),
            Some(SeedList::Count(k)) => (self.seed..self.seed + k).collect(),
            Some(SeedList::List(l)) if l.is_empty() => return Err(ConfigError::invalid("sweep.seeds", "axis is empty")),
            Some(SeedList::List(l)) => l,
        };
        let mut cells = Vec::with_capacity(ns.len() * ms.len() * ds.len() * seeds.len());
        for &n in &ns {
            for &m in &ms {
                for &d in &ds {
                    for &seed in &seeds {
                        cells.push(Cell { n, m, d, seed });
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn problem_spec(&self, d: usize) -> Result<ProblemSpec, ConfigError> {
        let p = self.raw.problem.as_ref().ok_or(ConfigError::Missing("problem.family"))?;
        let param_seed = p.param_seed.unwrap_or(self.seed);
        let spec = match p.family.as_str() {
            "linear-noise" => match &p.a {
                Some(a) => ProblemSpec {
                    family: Family::LinearNoise { a: a.resolve("problem.a", d)? },
                    sigma: p.sigma,
                },
                None => ProblemSpec::random("linear-noise", d, p.sigma, 0, param_seed)?,
            },
            "shifted-norm" => match &p.theta {
                Some(t) => ProblemSpec {
                    family: Family::ShiftedNorm {
                        theta: t.resolve("problem.theta", d)?,
                    },
                    sigma: p.sigma,
                },
                None => ProblemSpec::random("shifted-norm", d, p.sigma, 0, param_seed)?,
            },
            "max-affine" | "max-affine-noise" => match (&p.slopes, &p.offsets) {
                (Some(s), Some(o)) => ProblemSpec {
                    family: Family::MaxAffine {
                        slopes: s.clone(),
                        offsets: o.clone(),
                    },
                    sigma: p.sigma,
                },
                (None, None) => {
                    let pieces = p.pieces.ok_or(ConfigError::Missing("problem.pieces"))?;
                    ProblemSpec::random("max-affine", d, p.sigma, pieces, param_seed)?
                }
                _ => {
                    return Err(ConfigError::invalid(
                        "problem.slopes",
                        "slopes and offsets must be given together",
                    ))
                }
            },
            other => {
                return Err(ConfigError::invalid(
                    "problem.family",
                    format!("unknown family `{other}`"),
                ))
            }
        };
        make_problem(&spec)?;
        Ok(spec)
    }

    pub fn feasible_set(&self, d: usize) -> Result<FeasibleSet, ConfigError> {
        let s = self.raw.set.as_ref().ok_or(ConfigError::Missing("set.kind"))?;
        let center = || match &s.center {
            Some(c) => c.resolve("set.center", d),
            None => Ok(vec![0.0; d]),
        };
        let radius = || s.radius.ok_or(ConfigError::Missing("set.radius"));
        let set = match s.kind.as_str() {
            "box" => FeasibleSet::new_box(
                s.lo.as_ref().ok_or(ConfigError::Missing("set.lo"))?.resolve("set.lo", d)?,
                s.hi.as_ref().ok_or(ConfigError::Missing("set.hi"))?.resolve("set.hi", d)?,
            )?,
            "euclidean-ball" => FeasibleSet::euclidean_ball(center()?, radius()?)?,
            "l1-ball" => FeasibleSet::l1_ball(center()?, radius()?)?,
            other => return Err(ConfigError::invalid("set.kind", format!("unknown set kind `{other}`"))),
        };
        Ok(set)
    }

    /// The validated run for one sweep cell. `h` and `eta` default to the
    /// tuned values for the problem's Lipschitz constant.
    pub fn run_config(&self, cell: Cell) -> Result<RunConfig, ConfigError> {
        let Cell { n, m, d, seed } = cell;
        if d == 0 {
            return Err(ConfigError::invalid("d", "must be at least 1"));
        }
        let problem = self.problem_spec(d)?;
        let set = self.feasible_set(d)?;
        let lipschitz = make_problem(&problem)?.lipschitz;
        let (h0, eta0) = default_hyperparams(lipschitz, d, n.max(1), m.max(1));
        let x1 = match &self.raw.x1 {
            Some(v) => v.resolve("x1", d)?,
            None => set.center(),
        };
        let cfg = RunConfig {
            n,
            m,
            d,
            h: self.raw.h.unwrap_or(h0),
            eta: self.raw.eta.unwrap_or(eta0),
            x1,
            delta: self.raw.delta.unwrap_or(DEFAULT_DELTA),
            seed,
            problem,
            set,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn tails_plan(&self) -> Result<TailsPlan, ConfigError> {
        let t = self.raw.tails.as_ref().ok_or(ConfigError::Missing("tails.kinds"))?;
        let kinds = t.kinds.clone().unwrap_or_else(|| EnvelopeKind::ALL.to_vec());
        let dims = t.d.clone().or(self.raw.d.map(|d| vec![d])).ok_or(ConfigError::Missing("tails.d"))?;
        let samples = t.samples.unwrap_or(100_000);
        let functions = t.functions.clone().unwrap_or_else(|| TestFunction::ALL.to_vec());
        if kinds.is_empty() || dims.is_empty() || functions.is_empty() {
            return Err(ConfigError::invalid("tails", "kinds, d and functions must be non-empty"));
        }
        if samples < l1fed_core::concentration::MIN_TAIL_SAMPLES {
            return Err(ConfigError::invalid("tails.samples", "must be at least 10000"));
        }
        for &k in &kinds {
            for &d in &dims {
                k.grid_range(d).map_err(|e| ConfigError::invalid("tails.d", e.to_string()))?;
            }
        }
        Ok(TailsPlan {
            kinds,
            dims,
            samples,
            functions,
        })
    }

    fn martingale_plan(&self) -> Result<MartingalePlan, ConfigError> {
        let s = self.raw.martingale.clone().ok_or(ConfigError::Missing("martingale.laws"))?;
        let plan = MartingalePlan {
            laws: s
                .laws
                .unwrap_or_else(|| vec![IncrementLaw::BoundedSymmetric, IncrementLaw::CenteredGamma]),
            variance: s.variance.unwrap_or(1.0),
            scale: s.scale,
            steps: s.steps.unwrap_or(1000),
            paths: s.paths.unwrap_or(2000),
            deltas: s.deltas.unwrap_or_else(|| vec![0.05, 0.1]),
            c: s.c,
            rho: s.rho.unwrap_or(1.0),
        };
        if plan.laws.is_empty() || plan.deltas.is_empty() {
            return Err(ConfigError::invalid("martingale", "laws and deltas must be non-empty"));
        }
        for &law in &plan.laws {
            for &delta in &plan.deltas {
                let (spec, boundary) = plan.instance(law, delta)?;
                spec_check(&spec, &boundary)?;
            }
        }
        Ok(plan)
    }
}

impl MartingalePlan {
    /// The increment spec and boundary for one (law, delta) pair.
    pub fn instance(
        &self,
        law: IncrementLaw,
        delta: f64,
    ) -> Result<(l1fed_core::MartingaleSpec, l1fed_core::SubGammaBoundary), ConfigError> {
        let scale = self.scale.unwrap_or(match law {
            IncrementLaw::BoundedSymmetric => self.variance.sqrt() / 3.0,
            IncrementLaw::CenteredGamma => 0.5,
        });
        let spec = l1fed_core::MartingaleSpec {
            law,
            variance: self.variance,
            scale,
            steps: self.steps,
            paths: self.paths,
        };
        let boundary = l1fed_core::SubGammaBoundary::new(self.c.unwrap_or(scale), self.rho, delta)
            .map_err(|e| ConfigError::invalid("martingale.deltas", e.to_string()))?;
        Ok((spec, boundary))
    }
}

/// Runs the cheap parts of the coverage checks (certification, scale
/// ordering) without simulating.
fn spec_check(spec: &l1fed_core::MartingaleSpec, b: &l1fed_core::SubGammaBoundary) -> Result<(), ConfigError> {
    let probe = l1fed_core::MartingaleSpec { paths: 1, steps: 1, ..*spec };
    l1fed_core::boundary_coverage_experiment(&probe, b, l1fed_core::RngStream::new(0, 0, 0))
        .map(|_| ())
        .map_err(|e| ConfigError::invalid("martingale", e.to_string()))
}
