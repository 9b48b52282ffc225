//! Contextual convex Lipschitz objective families.
//!
//! Each family defines `f_c(x)` for a context `c` drawn uniformly from
//! `[-sigma, sigma]^d`, a Lipschitz constant valid for every context, and
//! the population objective `f(x) = E_c[f_c(x)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{check_dim, invalid, Error, Result};
use crate::l1_geometry::FeasibleSet;
use crate::rng::{RngStream, StreamRng};
use crate::vecops::{dot, norm2};

/// Accuracy of [`Problem::population_value`] for the shifted-norm family.
pub const SHIFTED_NORM_QUAD_TOL: f64 = 1e-6;

/// Family-specific parameters. The dimension is taken from the vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// `f_c(x) = <a + c, x>`
    LinearNoise { a: Vec<f64> },
    /// `f_c(x) = |x - theta - c|`
    ShiftedNorm { theta: Vec<f64> },
    /// `f_c(x) = max_k (<a_k, x> + b_k) + <c, x>`
    #[serde(alias = "max-affine-noise")]
    MaxAffine { slopes: Vec<Vec<f64>>, offsets: Vec<f64> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::LinearNoise { .. } => "linear-noise",
            Family::ShiftedNorm { .. } => "shifted-norm",
            Family::MaxAffine { .. } => "max-affine",
        }
    }
}

/// Serializable problem description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(flatten)]
    pub family: Family,
    /// Half-width of the uniform context distribution.
    pub sigma: f64,
}

impl ProblemSpec {
    /// Draws family parameters from `seed`: unit-norm slopes and offsets in
    /// `[-1/2, 1/2]` for the affine families, `theta` uniform in
    /// `[-1/2, 1/2]^d` for the shifted norm.
    pub fn random(kind: &str, d: usize, sigma: f64, pieces: usize, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, u64::MAX, 0).rng();
        let unit = |rng: &mut StreamRng| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
            let n = norm2(&v).max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let family = match kind {
            "linear-noise" => Family::LinearNoise { a: unit(&mut rng) },
            "shifted-norm" => Family::ShiftedNorm {
                theta: (0..d).map(|_| rng.gen::<f64>() - 0.5).collect(),
            },
            "max-affine" | "max-affine-noise" => Family::MaxAffine {
                slopes: (0..pieces).map(|_| unit(&mut rng)).collect(),
                offsets: (0..pieces).map(|_| rng.gen::<f64>() - 0.5).collect(),
            },
            other => return Err(invalid("problem.family", format!("unknown family `{other}`"))),
        };
        Ok(Self { family, sigma })
    }
}

/// A context vector with components in `[-sigma, sigma]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Context(pub Vec<f64>);

/// A validated problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub family: Family,
    pub sigma: f64,
    pub d: usize,
    /// Lipschitz constant of every `f_c`, in the Euclidean norm.
    pub lipschitz: f64,
}

fn check_finite(name: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(name, "must be finite"))
    }
}

/// Validates `spec` and computes the exact Lipschitz constant.
pub fn make_problem(spec: &ProblemSpec) -> Result<Problem> {
    let sigma = spec.sigma;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("problem.sigma", "must be finite and >= 0"));
    }
    let (d, lipschitz) = match &spec.family {
        Family::LinearNoise { a } => {
            check_finite("problem.a", a)?;
            (a.len(), norm2(a) + sigma * (a.len() as f64).sqrt())
        }
        Family::ShiftedNorm { theta } => {
            check_finite("problem.theta", theta)?;
            (theta.len(), 1.0)
        }
        Family::MaxAffine { slopes, offsets } => {
            if slopes.is_empty() {
                return Err(invalid("problem.slopes", "need at least one affine piece"));
            }
            if slopes.len() != offsets.len() {
                return Err(invalid(
                    "problem.offsets",
                    format!("{} offsets for {} slopes", offsets.len(), slopes.len()),
                ));
            }
            let d = slopes[0].len();
            for s in slopes {
                check_dim(d, s.len())?;
                check_finite("problem.slopes", s)?;
            }
            check_finite("problem.offsets", offsets)?;
            let max_slope = slopes.iter().map(|s| norm2(s)).fold(0.0, f64::max);
            (d, max_slope + sigma * (d as f64).sqrt())
        }
    };
    if d == 0 {
        return Err(invalid("problem", "dimension must be at least 1"));
    }
    Ok(Problem {
        family: spec.family.clone(),
        sigma,
        d,
        lipschitz,
    })
}

/// How a minimizer was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimizerMethod {
    Analytic,
    GridRefinement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub x: Vec<f64>,
    pub value: f64,
    pub method: MinimizerMethod,
}

impl Problem {
    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec {
            family: self.family.clone(),
            sigma: self.sigma,
        }
    }

    /// Draws a context: `d` uniforms on `[-sigma, sigma]`. Always consumes
    /// exactly `d` draws, even when `sigma = 0`.
    pub fn draw_context(&self, rng: &mut StreamRng) -> Context {
        Context(
            (0..self.d)
                .map(|_| self.sigma * (2.0 * rng.gen::<f64>() - 1.0))
                .collect(),
        )
    }

    /// `f_c(x)`.
    pub fn eval_context(&self, c: &Context, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x.len())?;
        check_dim(self.d, c.0.len())?;
        Ok(self.eval_context_unchecked(&c.0, x))
    }

    pub(crate) fn eval_context_unchecked(&self, c: &[f64], x: &[f64]) -> f64 {
        match &self.family {
            Family::LinearNoise { a } => a.iter().zip(c).zip(x).map(|((a, c), x)| (a + c) * x).sum(),
            Family::ShiftedNorm { theta } => theta
                .iter()
                .zip(c)
                .zip(x)
                .map(|((t, c), x)| {
                    let r = x - t - c;
                    r * r
                })
                .sum::<f64>()
                .sqrt(),
            Family::MaxAffine { slopes, offsets } => {
                max_affine(slopes, offsets, x) + dot(c, x)
            }
        }
    }

    /// Population objective `E_c[f_c(x)]`.
    ///
    /// Closed form for the affine families. For the shifted norm this is a
    /// one-dimensional quadrature accurate to [`SHIFTED_NORM_QUAD_TOL`].
    pub fn population_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x.len())?;
        Ok(match &self.family {
            Family::LinearNoise { a } => dot(a, x),
            Family::MaxAffine { slopes, offsets } => max_affine(slopes, offsets, x),
            Family::ShiftedNorm { theta } => {
                let v: Vec<f64> = x.iter().zip(theta).map(|(x, t)| x - t).collect();
                expected_norm_uniform_shift(&v, self.sigma)
            }
        })
    }

    /// Minimizer of the population objective over `set`.
    ///
    /// Analytic for linear objectives and for the shifted norm when the
    /// projection of `theta` is provably optimal (`theta` inside the set,
    /// or no noise). Otherwise a grid-refinement search, allowed for
    /// `d <= 4` only.
    pub fn minimizer(&self, set: &FeasibleSet) -> Result<Minimizer> {
        check_dim(self.d, set.dim())?;
        let analytic = |x: Vec<f64>| -> Result<Minimizer> {
            let value = self.population_value(&x)?;
            Ok(Minimizer {
                x,
                value,
                method: MinimizerMethod::Analytic,
            })
        };
        match &self.family {
            Family::LinearNoise { a } => analytic(minimize_linear(a, set)),
            Family::ShiftedNorm { theta } => {
                let p = set.project(theta)?;
                // With theta inside the set the population objective is
                // symmetric about theta, so theta is optimal.
                if self.sigma == 0.0 || p == *theta {
                    analytic(p)
                } else {
                    self.grid_minimizer(set)
                }
            }
            Family::MaxAffine { .. } => self.grid_minimizer(set),
        }
    }

    fn grid_minimizer(&self, set: &FeasibleSet) -> Result<Minimizer> {
        if self.d > 4 {
            return Err(Error::BruteForceDimension(self.d));
        }
        let (x, value) = grid_refine(set, |x| {
            self.population_value(x).expect("dimension checked")
        })?;
        Ok(Minimizer {
            x,
            value,
            method: MinimizerMethod::GridRefinement,
        })
    }
}

fn max_affine(slopes: &[Vec<f64>], offsets: &[f64], x: &[f64]) -> f64 {
    slopes
        .iter()
        .zip(offsets)
        .map(|(s, b)| dot(s, x) + b)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn minimize_linear(a: &[f64], set: &FeasibleSet) -> Vec<f64> {
    match set {
        FeasibleSet::Box { lo, hi } => a
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&ai, (&l, &h))| if ai < 0.0 { h } else { l })
            .collect(),
        FeasibleSet::EuclideanBall { center, radius } => {
            let n = norm2(a);
            if n == 0.0 {
                return center.clone();
            }
            center.iter().zip(a).map(|(c, ai)| c - radius * ai / n).collect()
        }
        FeasibleSet::L1Ball { center, radius } => {
            let mut x = center.clone();
            let (k, ak) = a
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1.abs() { (i, v) } else { best });
            if ak != 0.0 {
                x[k] -= radius * ak.signum();
            }
            x
        }
    }
}

/// Grid-refinement search for a convex `f` over `set` (small `d` only).
///
/// Each level evaluates a `k^d` grid over the current window (points are
/// projected into the set), recenters on the best point and halves the
/// window.
pub fn grid_refine<F: Fn(&[f64]) -> f64>(set: &FeasibleSet, f: F) -> Result<(Vec<f64>, f64)> {
    let d = set.dim();
    if d > 4 {
        return Err(Error::BruteForceDimension(d));
    }
    let k: usize = match d {
        1 => 41,
        2 => 21,
        3 => 13,
        _ => 9,
    };
    let (blo, bhi) = set.bounding_box();
    let mut center: Vec<f64> = blo.iter().zip(&bhi).map(|(l, h)| 0.5 * (l + h)).collect();
    let mut half: Vec<f64> = blo.iter().zip(&bhi).map(|(l, h)| 0.5 * (h - l)).collect();
    let scale = set.diameter();
    let mut best_x = set.project(&center)?;
    let mut best_f = f(&best_x);
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    for _level in 0..80 {
        idx.iter_mut().for_each(|i| *i = 0);
        let mut level_best = (best_x.clone(), best_f);
        loop {
            for i in 0..d {
                let lo = (center[i] - half[i]).max(blo[i]);
                let hi = (center[i] + half[i]).min(bhi[i]);
                point[i] = lo + (hi - lo) * idx[i] as f64 / (k - 1) as f64;
            }
            let p = set.project(&point)?;
            let v = f(&p);
            if v < level_best.1 {
                level_best = (p, v);
            }
            // odometer increment
            let mut i = 0;
            while i < d {
                idx[i] += 1;
                if idx[i] < k {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == d {
                break;
            }
        }
        best_x = level_best.0;
        best_f = level_best.1;
        center.clone_from(&best_x);
        half.iter_mut().for_each(|h| *h *= 0.5);
        if half.iter().all(|&h| h < 1e-10 * scale) {
            break;
        }
    }
    Ok((best_x, best_f))
}

/// `E |v - c|` for `c` uniform on `[-sigma, sigma]^d`.
///
/// Uses `sqrt(s) = (1 / (2 sqrt(pi))) * int_0^inf (1 - e^{-t s}) t^{-3/2} dt`,
/// which turns the expectation into a single integral over `t` of
/// `1 - prod_i E exp(-t w_i^2)`, with each factor in closed form. After the
/// substitution `t = e^u / scale^2` the integrand decays like `e^{-|u|/2}`
/// on both sides and the trapezoid rule converges geometrically.
pub fn expected_norm_uniform_shift(v: &[f64], sigma: f64) -> f64 {
    if sigma == 0.0 {
        return norm2(v);
    }
    let bounds: Vec<(f64, f64)> = v.iter().map(|&vi| (vi - sigma, vi + sigma)).collect();
    let second_moment: f64 = v.iter().map(|vi| vi * vi + sigma * sigma / 3.0).sum();
    let scale = second_moment.sqrt();
    const U_MAX: f64 = 50.0;
    const STEP: f64 = 0.25;
    let nodes = (2.0 * U_MAX / STEP) as usize;
    let mut acc = 0.0;
    for k in 0..=nodes {
        let u = -U_MAX + STEP * k as f64;
        let t = u.exp() / second_moment;
        let log_prod: f64 = bounds
            .iter()
            .map(|&(a, b)| (-one_minus_gauss_mgf(t, a, b)).ln_1p())
            .sum();
        let one_minus_prod = -log_prod.exp_m1();
        acc += one_minus_prod * (-0.5 * u).exp();
    }
    scale * acc * STEP / (2.0 * std::f64::consts::PI.sqrt())
}

/// `1 - E exp(-t w^2)` for `w` uniform on `[a, b]`, accurate for all `t`.
fn one_minus_gauss_mgf(t: f64, a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if t * m * m < 0.5 {
        // Alternating series in the even moments of w.
        let width = b - a;
        let mut sum = 0.0;
        let mut t_pow = 1.0;
        let mut fact = 1.0;
        let mut a_pow = a;
        let mut b_pow = b;
        for k in 1..=30 {
            t_pow *= t;
            fact *= k as f64;
            a_pow *= a * a;
            b_pow *= b * b;
            let moment = (b_pow - a_pow) / ((2 * k + 1) as f64 * width);
            let term = t_pow * moment / fact;
            if k % 2 == 1 {
                sum += term;
            } else {
                sum -= term;
            }
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    let s = t.sqrt();
    let diff = if a >= 0.0 {
        erfc(a * s) - erfc(b * s)
    } else if b <= 0.0 {
        erfc(-b * s) - erfc(-a * s)
    } else {
        erf(b * s) - erf(a * s)
    };
    let mgf = std::f64::consts::PI.sqrt() / (2.0 * s * (b - a)) * diff;
    (1.0 - mgf).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: Vec<f64>, sigma: f64) -> Problem {
        make_problem(&ProblemSpec {
            family: Family::LinearNoise { a },
            sigma,
        })
        .unwrap()
    }

    fn shifted(theta: Vec<f64>, sigma: f64) -> Problem {
        make_problem(&ProblemSpec {
            family: Family::ShiftedNorm { theta },
            sigma,
        })
        .unwrap()
    }

    fn two_piece(sigma: f64) -> Problem {
        make_problem(&ProblemSpec {
            family: Family::MaxAffine {
                slopes: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                offsets: vec![0.0, 0.0],
            },
            sigma,
        })
        .unwrap()
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(linear(vec![1.0, 0.0], 0.0).lipschitz, 1.0);
        assert_eq!(shifted(vec![0.0; 5], 0.1).lipschitz, 1.0);
        assert_eq!(two_piece(0.0).lipschitz, 1.0);
        let p = linear(vec![3.0, 4.0], 0.5);
        assert!((p.lipschitz - (5.0 + 0.5 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs() {
        let bad = ProblemSpec {
            family: Family::MaxAffine {
                slopes: vec![],
                offsets: vec![],
            },
            sigma: 0.0,
        };
        assert!(make_problem(&bad).is_err());
        let neg = ProblemSpec {
            family: Family::ShiftedNorm { theta: vec![0.0] },
            sigma: -1.0,
        };
        assert!(make_problem(&neg).is_err());
        let ragged = ProblemSpec {
            family: Family::MaxAffine {
                slopes: vec![vec![1.0, 0.0], vec![1.0]],
                offsets: vec![0.0, 0.0],
            },
            sigma: 0.0,
        };
        assert!(make_problem(&ragged).is_err());
    }

    #[test]
    fn context_evaluations() {
        let zero = Context(vec![0.0, 0.0]);
        assert_eq!(linear(vec![1.0, 2.0], 0.0).eval_context(&zero, &[1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(shifted(vec![1.0, 0.0], 0.0).eval_context(&zero, &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(two_piece(0.0).eval_context(&zero, &[0.3, 0.7]).unwrap(), 0.7);
        assert!(two_piece(0.0).eval_context(&zero, &[0.3]).is_err());
    }

    #[test]
    fn population_values_closed_form() {
        assert_eq!(linear(vec![1.0, 2.0], 0.7).population_value(&[1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(two_piece(0.5).population_value(&[0.3, 0.7]).unwrap(), 0.7);
    }

    #[test]
    fn shifted_norm_quadrature_one_dimensional() {
        // E|v - c| for c ~ U[-s, s] in 1-D: (s^2 + v^2) / (2 s) when |v| <= s.
        for (v, s) in [(0.0, 1.0), (0.3, 0.5), (-0.2, 2.0)] {
            let exact = (s * s + v * v) / (2.0 * s);
            let q = expected_norm_uniform_shift(&[v], s);
            assert!((q - exact).abs() < 1e-9, "v={v} s={s}: {q} vs {exact}");
        }
        // |v| > s: the shift never crosses zero.
        assert!((expected_norm_uniform_shift(&[3.0], 0.5) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn shifted_norm_quadrature_two_dimensional_box_centre() {
        // Mean distance from the centre of a square of side 2s:
        // s * (sqrt(2) + asinh(1)) / 3.
        let s = 0.2;
        let exact = s * (2f64.sqrt() + 1f64.asinh()) / 3.0;
        let q = expected_norm_uniform_shift(&[0.0, 0.0], s);
        assert!((q - exact).abs() < 1e-9, "{q} vs {exact}");
    }

    #[test]
    fn linear_minimizers() {
        let ball = FeasibleSet::euclidean_ball(vec![0.0, 0.0], 2.0).unwrap();
        let m = linear(vec![1.0, 0.0], 0.0).minimizer(&ball).unwrap();
        assert_eq!(m.x, vec![-2.0, 0.0]);
        assert_eq!(m.value, -2.0);
        let bx = FeasibleSet::new_box(vec![-1.0, -1.0], vec![1.0, 2.0]).unwrap();
        let m = linear(vec![1.0, -1.0], 0.0).minimizer(&bx).unwrap();
        assert_eq!(m.x, vec![-1.0, 2.0]);
        let l1 = FeasibleSet::l1_ball(vec![0.0, 0.0], 1.0).unwrap();
        let m = linear(vec![0.5, -2.0], 0.0).minimizer(&l1).unwrap();
        assert_eq!(m.x, vec![0.0, 1.0]);
        assert_eq!(m.value, -2.0);
    }

    #[test]
    fn shifted_norm_minimizer_is_projection() {
        let bx = FeasibleSet::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let m = shifted(vec![3.0, 0.0], 0.0).minimizer(&bx).unwrap();
        assert_eq!(m.x, vec![1.0, 0.0]);
        assert_eq!(m.value, 2.0);
        assert_eq!(m.method, MinimizerMethod::Analytic);
    }

    #[test]
    fn brute_force_limited_to_small_d() {
        let p = make_problem(&ProblemSpec::random("max-affine", 5, 0.0, 3, 1).unwrap()).unwrap();
        let ball = FeasibleSet::euclidean_ball(vec![0.0; 5], 1.0).unwrap();
        assert_eq!(p.minimizer(&ball), Err(Error::BruteForceDimension(5)));
    }

    #[test]
    fn random_specs_are_seeded() {
        let a = ProblemSpec::random("linear-noise", 4, 0.1, 1, 9).unwrap();
        let b = ProblemSpec::random("linear-noise", 4, 0.1, 1, 9).unwrap();
        assert_eq!(a, b);
        assert!(ProblemSpec::random("quadratic", 4, 0.1, 1, 9).is_err());
    }
}
