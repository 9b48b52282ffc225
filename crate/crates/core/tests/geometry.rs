use l1fed_core::l1_geometry::{laplace_quantile, sample_l1_sphere_with_norm};
use l1fed_core::vecops::{dist2, norm1, norm2};
use l1fed_core::{sample_l1_ball, sample_l1_sphere, sample_laplace, FeasibleSet, RngStream};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Gamma};

/// Kolmogorov-Smirnov statistic of `samples` against `cdf`.
fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

// Critical value at level 0.001 is about 1.95 / sqrt(N).
fn ks_limit(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

#[test]
fn laplace_moments() {
    let mut rng = RngStream::new(11, 0, 0).rng();
    let n = 400_000;
    let xs: Vec<f64> = (0..n).map(|_| sample_laplace(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let abs = xs.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
    // sd(X) = sqrt 2, sd(X^2) = sqrt(24 - 4) = sqrt 20, sd(|X|) = 1
    let nf = (n as f64).sqrt();
    assert!(mean.abs() < 4.0 * 2f64.sqrt() / nf, "mean {mean}");
    assert!((var - 2.0).abs() < 4.0 * 20f64.sqrt() / nf, "var {var}");
    assert!((abs - 1.0).abs() < 4.0 / nf, "E|X| {abs}");
}

#[test]
fn laplace_quantile_is_inverse_cdf() {
    for &u in &[1e-9, 0.01, 0.25, 0.5, 0.75, 0.99] {
        let x: f64 = laplace_quantile(u);
        let cdf = if x < 0.0 { 0.5 * x.exp() } else { 1.0 - 0.5 * (-x).exp() };
        assert!((cdf - u).abs() < 1e-12, "u={u}");
    }
    assert_eq!(laplace_quantile(0.5), 0.0);
}

#[test]
fn sphere_norm_is_gamma_and_on_sphere() {
    for d in [1usize, 3, 10] {
        let mut rng = RngStream::new(5, d as u64, 0).rng();
        let n = 50_000;
        let mut norms = Vec::with_capacity(n);
        for _ in 0..n {
            let (z, s) = sample_l1_sphere_with_norm(d, &mut rng);
            assert!((norm1(z.coords()) - 1.0).abs() < 1e-12);
            norms.push(s);
        }
        let g = Gamma::new(d as f64, 1.0).unwrap();
        let ks = ks_statistic(norms, |x| g.cdf(x));
        assert!(ks < ks_limit(n), "d={d} ks={ks}");
    }
}

#[test]
fn sphere_direction_is_uncorrelated_with_norm() {
    let d = 4;
    let mut rng = RngStream::new(6, 0, 0).rng();
    let n = 200_000;
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let (z, s) = sample_l1_sphere_with_norm(d, &mut rng);
            (z.coords()[0].abs(), s)
        })
        .collect();
    let (ma, mb) = pairs
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n as f64, acc.1 + p.1 / n as f64));
    let cov: Vec<f64> = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).collect();
    let c = cov.iter().sum::<f64>() / n as f64;
    let sd = (cov.iter().map(|v| (v - c) * (v - c)).sum::<f64>() / n as f64).sqrt();
    assert!(c.abs() < 4.0 * sd / (n as f64).sqrt(), "cov {c}");
    // |zeta_1| ~ Beta(1, d-1) has mean 1/d.
    assert!((ma - 0.25).abs() < 0.002, "mean |zeta_1| {ma}");
}

#[test]
fn ball_radius_has_power_law() {
    let d = 3;
    let mut rng = RngStream::new(8, 0, 0).rng();
    let n = 50_000;
    let radii: Vec<f64> = (0..n).map(|_| norm1(&sample_l1_ball(d, &mut rng))).collect();
    assert!(radii.iter().all(|&r| r <= 1.0 + 1e-12));
    let ks = ks_statistic(radii, |r| r.clamp(0.0, 1.0).powi(d as i32));
    assert!(ks < ks_limit(n), "ks={ks}");
}

#[test]
fn sphere_is_sign_symmetric() {
    let mut rng = RngStream::new(9, 0, 0).rng();
    let n = 100_000;
    let pos = (0..n).filter(|_| sample_l1_sphere(5, &mut rng).coords()[2] >= 0.0).count();
    let p = pos as f64 / n as f64;
    assert!((p - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
}

fn sets() -> Vec<FeasibleSet> {
    vec![
        FeasibleSet::new_box(vec![-1.0, 0.0, -0.5], vec![1.0, 2.0, 0.5]).unwrap(),
        FeasibleSet::euclidean_ball(vec![0.5, -0.5, 0.0], 1.5).unwrap(),
        FeasibleSet::l1_ball(vec![0.0, 1.0, -1.0], 0.7).unwrap(),
    ]
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 3)
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_feasible(x in point(), k in 0usize..3) {
        let set = &sets()[k];
        let p = set.project(&x).unwrap();
        prop_assert!(set.contains(&p, 1e-9).unwrap());
        prop_assert_eq!(set.project(&p).unwrap(), p);
    }

    #[test]
    fn projection_is_non_expansive(x in point(), y in point(), k in 0usize..3) {
        let set = &sets()[k];
        let (px, py) = (set.project(&x).unwrap(), set.project(&y).unwrap());
        prop_assert!(dist2(&px, &py) <= dist2(&x, &y) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn projection_is_nearest_among_samples(x in point(), k in 0usize..3, seed in 0u64..1000) {
        let set = &sets()[k];
        let p = set.project(&x).unwrap();
        let best = dist2(&p, &x);
        let mut rng = RngStream::new(seed, 0, 0).rng();
        let center = set.center();
        for _ in 0..50 {
            let u = sample_l1_ball(3, &mut rng);
            let cand: Vec<f64> = center.iter().zip(&u).map(|(c, u)| c + 3.0 * u).collect();
            let q = set.project(&cand).unwrap();
            prop_assert!(dist2(&q, &x) >= best - 1e-9);
        }
    }

    #[test]
    fn sphere_samples_have_unit_l1_norm(seed in any::<u64>(), d in 1usize..64) {
        let mut rng = RngStream::new(seed, 0, 0).rng();
        let z = sample_l1_sphere(d, &mut rng);
        prop_assert!((norm1(z.coords()) - 1.0).abs() < 1e-12);
        prop_assert!(norm2(z.coords()) <= 1.0 + 1e-12);
    }
}
