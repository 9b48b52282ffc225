//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p l1fed-exp --test acceptance`.

use std::time::{Duration, Instant};

use l1fed_core::concentration::{grad_second_moment, second_moment_bound};
use l1fed_core::{
    boundary_coverage_experiment, grad_estimate, make_problem, run_direct, run_federated, run_federated_with,
    sample_l1_ball, sample_l1_sphere, smoothed_grad_mc, smoothed_value_mc, tail_experiment, EnvelopeKind, Execution,
    IncrementLaw, L1Direction, MartingaleSpec, ProblemSpec, RngStream, SmoothedOracle, SubGammaBoundary, Target,
    TestFunction, WorkerMessage,
};
use l1fed_exp::{parse_config, run_sweep};
use rand::Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn check(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let ok = v.passed && in_time;
    println!(
        "criterion {id} [{name}]: {} ({}; {:.1} s of {} s allowed)",
        if ok { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    ok
}

fn unbiasedness() -> Verdict {
    let f = |x: &[f64]| x[0] + 2.0 * x[1] + 3.0 * x[2];
    let oracle = SmoothedOracle {
        target: Target::Function { d: 3, f: &f },
        h: 0.5,
        samples: 1_000_000,
    };
    let g = smoothed_grad_mc(&oracle, &[0.0; 3], RngStream::new(101, 0, 0)).unwrap();
    let z: Vec<f64> = (0..3)
        .map(|i| (g.mean[i] - (i + 1) as f64) / g.std_error[i])
        .collect();
    let worst = z.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Verdict {
        passed: worst <= 4.0,
        detail: format!("mean {:.4?}, max |z| = {worst:.2}", g.mean),
    }
}

fn bias_bound() -> Verdict {
    let mut rng = RngStream::new(202, 0, 0).rng();
    let (mut checked, mut failed) = (0, 0);
    let mut worst_ratio = f64::NEG_INFINITY;
    for d in [3usize, 5, 10] {
        let theta: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let p = make_problem(&ProblemSpec {
            family: l1fed_core::Family::ShiftedNorm { theta },
            sigma: 0.0,
        })
        .unwrap();
        for (hi, h) in [0.01, 0.1, 1.0].into_iter().enumerate() {
            for k in 0..5u64 {
                let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
                let oracle = SmoothedOracle {
                    target: Target::Population(&p),
                    h,
                    samples: 1_000_000,
                };
                let v = smoothed_value_mc(&oracle, &x, RngStream::new(202, d as u64, 10 * hi as u64 + k)).unwrap();
                let gap = v.mean - p.population_value(&x).unwrap();
                let upper = 2.0 * h / ((d + 1) as f64).sqrt();
                checked += 1;
                if gap < -4.0 * v.std_error || gap > upper + 4.0 * v.std_error {
                    failed += 1;
                }
                worst_ratio = worst_ratio.max(gap / upper);
            }
        }
    }
    Verdict {
        passed: failed == 0,
        detail: format!("{checked} points, {failed} outside, largest gap/bound {worst_ratio:.3}"),
    }
}

fn variance_bound() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for (k, kind) in ["linear-noise", "shifted-norm", "max-affine"].iter().enumerate() {
        for d in [3usize, 10, 50] {
            let p = make_problem(&ProblemSpec::random(kind, d, 0.5, 5, 303 + d as u64).unwrap()).unwrap();
            let mut rng = RngStream::new(303, k as u64, d as u64).rng();
            let x = sample_l1_ball(d, &mut rng);
            let m = grad_second_moment(&p, &x, 0.1, 100_000, RngStream::new(303, 1 + k as u64, d as u64)).unwrap();
            let bound = second_moment_bound(p.lipschitz, d);
            worst = worst.max(m.mean / bound);
            if m.mean > bound {
                failed += 1;
            }
        }
    }
    Verdict {
        passed: failed == 0,
        detail: format!("9 cases, largest E|g|^2 / (104.9 L^2 d) = {worst:.3}"),
    }
}

fn tail_domination() -> Verdict {
    let mut experiments = 0;
    let mut counted = 0;
    let mut violations = 0;
    let mut vacuous = Vec::new();
    for kind in EnvelopeKind::ALL {
        for d in [8usize, 16, 32, 64] {
            let fns: Vec<Option<TestFunction>> = if kind.uses_function() {
                TestFunction::ALL.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for f in fns {
                let r = tail_experiment(kind, d, 100_000, f, RngStream::new(404, experiments, 0)).unwrap();
                experiments += 1;
                let c = r.grid.iter().filter(|g| g.counted).count();
                if c == 0 && !vacuous.contains(&format!("{kind}/d{d}")) {
                    vacuous.push(format!("{kind}/d{d}"));
                }
                counted += c;
                violations += r.violations;
            }
        }
    }
    Verdict {
        passed: violations == 0,
        detail: format!(
            "{experiments} experiments, {counted} non-vacuous grid points, {violations} violations; vacuous (envelope >= 1 on the whole grid): {}",
            if vacuous.is_empty() { "none".to_string() } else { vacuous.join(", ") }
        ),
    }
}

fn boundary_coverage() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (k, (law, scale)) in [(IncrementLaw::BoundedSymmetric, 1.0 / 3.0), (IncrementLaw::CenteredGamma, 0.5)]
        .into_iter()
        .enumerate()
    {
        for delta in [0.05, 0.1] {
            let spec = MartingaleSpec {
                law,
                variance: 1.0,
                scale,
                steps: 1000,
                paths: 2000,
            };
            let b = SubGammaBoundary::new(scale, 1.0, delta).unwrap();
            let r = boundary_coverage_experiment(&spec, &b, RngStream::new(505, k as u64, (delta * 100.0) as u64)).unwrap();
            let limit = 2.0 * delta + 3.0 * (2.0 * delta * (1.0 - 2.0 * delta) / 2000.0).sqrt();
            ok &= r.crossing_fraction <= limit;
            parts.push(format!("{} d={delta}: {:.4} <= {limit:.4}", law.name(), r.crossing_fraction));
        }
    }
    Verdict {
        passed: ok,
        detail: parts.join("; "),
    }
}

const SHIFTED: &str = r#"
mode = "sweep"
d = 5
x1 = "e1"
delta = 0.1
problem.family = "shifted-norm"
problem.theta = 0.0
problem.sigma = 0.5
set.kind = "euclidean-ball"
set.radius = 1.0
"#;

fn high_probability_regret() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&format!("{SHIFTED}seed = 0\nsweep.n = [512]\nsweep.m = [4]\nsweep.seeds = 200\n")).unwrap();
    let o = run_sweep(&cfg, dir.path()).unwrap();
    let runs = o.rows.len();
    let frac = o.summary.bound_violations as f64 / runs as f64;
    let limit = 0.1 + 3.0 * (0.1 * 0.9 / runs as f64).sqrt();
    let worst = o.rows.iter().map(|r| r.cumulative_regret / r.bound_total).fold(0.0, f64::max);
    Verdict {
        passed: runs == 200 && o.summary.failures.is_empty() && frac <= limit,
        detail: format!("{runs} runs, violation fraction {frac:.3} <= {limit:.3}, largest regret/bound {worst:.2e}"),
    }
}

fn rate_scaling() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&format!(
        "{SHIFTED}seed = 1000\nsweep.n = [64, 128, 256, 512, 1024, 2048, 4096]\nsweep.m = [1, 4, 16]\nsweep.seeds = 20\n"
    ))
    .unwrap();
    let o = run_sweep(&cfg, dir.path()).unwrap();
    let (Some(nm), Some(n)) = (&o.summary.fit_nm, &o.summary.fit_n_single_worker) else {
        return Verdict {
            passed: false,
            detail: "fit unavailable".into(),
        };
    };
    let inside = |s: f64| (-0.6..=-0.4).contains(&s);
    Verdict {
        passed: o.rows.len() == 420 && inside(nm.slope) && inside(n.slope),
        detail: format!(
            "slope vs log(nm) {:.3} (rms {:.3}), single-worker slope vs log(n) {:.3} (rms {:.3})",
            nm.slope, nm.residual_rms, n.slope, n.residual_rms
        ),
    }
}

fn exactness() -> Verdict {
    let mut rng = RngStream::new(808, 0, 0).rng();
    let mut codec_ok = true;
    for _ in 0..10_000 {
        let d = rng.gen_range(1..=70);
        let mut z = sample_l1_sphere(d, &mut rng).into_vec();
        if rng.gen_bool(0.3) {
            z[rng.gen_range(0..d)] = 0.0;
        }
        let Ok(z) = L1Direction::from_vec(z) else { continue };
        let (y, yp, h) = (rng.gen::<f64>() * 10.0 - 5.0, rng.gen::<f64>() * 10.0 - 5.0, rng.gen::<f64>() + 1e-3);
        let msg = WorkerMessage::encode(y, yp, &z);
        let bytes = msg.to_bytes();
        let back = WorkerMessage::from_bytes(&bytes, d).unwrap();
        let a = back.decode(d, h).unwrap();
        let b = grad_estimate(h, y, yp, &z).unwrap();
        codec_ok &= bytes.len() == 8 + d.div_ceil(8)
            && a.0.iter().zip(&b.0).all(|(u, v)| u.to_bits() == v.to_bits());
    }

    let base = |n, m, d: usize, seed| {
        let mut x1 = vec![0.0; d];
        x1[0] = 0.5;
        l1fed_core::RunConfig {
            n,
            m,
            d,
            h: 0.05,
            eta: 0.05,
            x1,
            delta: 0.1,
            seed,
            problem: ProblemSpec::random("max-affine", d, 0.3, 4, seed).unwrap(),
            set: l1fed_core::FeasibleSet::euclidean_ball(vec![0.0; d], 1.0).unwrap(),
        }
    };
    let mut direct_ok = true;
    for seed in 0..5 {
        let cfg = base(200, 1, 3, seed);
        let a = run_federated(&cfg).unwrap();
        let b = run_direct(&cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        direct_ok &= a.records.len() == b.records.len()
            && a.records.iter().zip(&b.records).all(|(r, s)| {
                bits(&r.x) == bits(&s.x) && bits(&r.g) == bits(&s.g) && r.f_x.to_bits() == s.f_x.to_bits()
            });
    }

    let mut bytes_ok = true;
    let mut sched_ok = true;
    for (n, m, d) in [(50, 3, 2), (20, 7, 9), (10, 4, 100)] {
        let mut cfg = base(n, m, d, 1);
        if d > 4 {
            cfg.problem = ProblemSpec::random("linear-noise", d, 0.3, 0, 1).unwrap();
        }
        let seq = run_federated_with(&cfg, Execution::Sequential).unwrap();
        let par = run_federated_with(&cfg, Execution::Parallel).unwrap();
        bytes_ok &= seq.total_bytes == n * m * (8 + d.div_ceil(8));
        sched_ok &= seq == par;
    }
    Verdict {
        passed: codec_ok && direct_ok && bytes_ok && sched_ok,
        detail: format!(
            "codec round-trip {codec_ok}, m=1 vs direct {direct_ok}, byte count {bytes_ok}, parallel = sequential {sched_ok}"
        ),
    }
}

fn main() {
    // Ignore libtest flags such as --nocapture passed through by cargo.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |id: u32| filter.is_empty() || filter.iter().any(|f| f == &id.to_string());
    let min = |m: u64| Duration::from_secs(60 * m);
    let mut all = true;
    type Case = (u32, &'static str, Duration, fn() -> Verdict);
    let cases: [Case; 8] = [
        (1, "unbiasedness", Duration::from_secs(10), unbiasedness),
        (2, "bias bound", min(1), bias_bound),
        (3, "second-moment bound", min(1), variance_bound),
        (4, "tail domination", min(5), tail_domination),
        (5, "sub-gamma boundary coverage", min(5), boundary_coverage),
        (6, "high-probability regret", min(10), high_probability_regret),
        (7, "rate scaling", min(30), rate_scaling),
        (8, "exactness", min(1), exactness),
    ];
    for (id, name, limit, f) in cases {
        if selected(id) {
            all &= check(id, name, limit, f);
        }
    }
    if !all {
        std::process::exit(1);
    }
}
