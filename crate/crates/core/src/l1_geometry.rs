//! Sampling on the l1 sphere and ball, sign extraction, and Euclidean
//! projections onto the feasible sets used by the optimizer.

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::rng::StreamRng;
use crate::vecops::{dist2, norm1, norm2};

/// Points whose norm exceeds the radius by at most this relative amount are
/// treated as feasible. This keeps projection exactly idempotent in floating
/// point.
pub const FEASIBILITY_RTOL: f64 = 1e-12;

/// One standard Laplace draw (density `exp(-|x|)/2`) by inverse CDF.
pub fn sample_laplace(rng: &mut StreamRng) -> f64 {
    let u: f64 = rng.sample(Open01);
    laplace_quantile(u)
}

/// Inverse CDF of the standard Laplace law.
pub fn laplace_quantile(u: f64) -> f64 {
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// Fills `out` with i.i.d. standard Laplace draws.
pub fn fill_laplace(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = sample_laplace(rng);
    }
}

/// A point on the unit l1 sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct L1Direction(Vec<f64>);

impl L1Direction {
    /// Normalizes `coords` onto the sphere. Fails on an empty or zero vector.
    pub fn from_vec(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("coords", "dimension must be at least 1"));
        }
        let s = norm1(&coords);
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid("coords", "l1 norm must be positive and finite"));
        }
        Ok(Self(coords.into_iter().map(|x| x / s).collect()))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Uniform draw from the unit l1 sphere in dimension `d`: a Laplace vector
/// divided by its l1 norm. Also returns that norm, which is independent of
/// the direction.
pub fn sample_l1_sphere_with_norm(d: usize, rng: &mut StreamRng) -> (L1Direction, f64) {
    assert!(d >= 1, "dimension must be at least 1");
    let mut x = vec![0.0; d];
    loop {
        fill_laplace(rng, &mut x);
        let s = norm1(&x);
        if s > 0.0 {
            x.iter_mut().for_each(|v| *v /= s);
            return (L1Direction(x), s);
        }
    }
}

pub fn sample_l1_sphere(d: usize, rng: &mut StreamRng) -> L1Direction {
    sample_l1_sphere_with_norm(d, rng).0
}

/// Uniform draw from the unit l1 ball: a sphere point scaled by `W^(1/d)`.
pub fn sample_l1_ball(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    let z = sample_l1_sphere(d, rng);
    let w: f64 = rng.sample(Open01);
    let r = w.powf(1.0 / d as f64);
    z.0.into_iter().map(|v| r * v).collect()
}

/// Component-wise sign with `sign(0) = +1`, including negative zero.
pub fn sign_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sign(v)).collect()
}

#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Convex compact feasible sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeasibleSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    EuclideanBall { center: Vec<f64>, radius: f64 },
    L1Ball { center: Vec<f64>, radius: f64 },
}

impl FeasibleSet {
    pub fn new_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(invalid("set.lo", "dimension must be at least 1"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(invalid("set.lo", "need finite lo < hi in every coordinate"));
        }
        Ok(Self::Box { lo, hi })
    }

    pub fn euclidean_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::check_ball(&center, radius)?;
        Ok(Self::EuclideanBall { center, radius })
    }

    pub fn l1_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::check_ball(&center, radius)?;
        Ok(Self::L1Ball { center, radius })
    }

    fn check_ball(center: &[f64], radius: f64) -> Result<()> {
        if center.is_empty() {
            return Err(invalid("set.center", "dimension must be at least 1"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("set.radius", "must be positive and finite"));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(invalid("set.center", "must be finite"));
        }
        Ok(())
    }

    /// Re-runs constructor validation; useful after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Box { lo, hi } => Self::new_box(lo.clone(), hi.clone()).map(|_| ()),
            Self::EuclideanBall { center, radius } | Self::L1Ball { center, radius } => {
                Self::check_ball(center, *radius)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lo, .. } => lo.len(),
            Self::EuclideanBall { center, .. } | Self::L1Ball { center, .. } => center.len(),
        }
    }

    /// Exact Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        match self {
            Self::Box { lo, hi } => dist2(lo, hi),
            // Antipodal vertices +-r e_i of the cross-polytope are 2r apart.
            Self::EuclideanBall { radius, .. } | Self::L1Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// A canonical interior point (box midpoint or ball center).
    pub fn center(&self) -> Vec<f64> {
        match self {
            Self::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            Self::EuclideanBall { center, .. } | Self::L1Ball { center, .. } => center.clone(),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Box { lo, hi } => (lo.clone(), hi.clone()),
            Self::EuclideanBall { center, radius } | Self::L1Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Euclidean distance from `x` to the set, ignoring the feasibility slack.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        Ok(dist2(x, &p))
    }

    /// Membership up to an absolute tolerance on the distance.
    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.distance(x)? <= tol)
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Self::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| v.clamp(l, h))
                .collect(),
            Self::EuclideanBall { center, radius } => {
                let u: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm2(&u);
                if r <= radius * (1.0 + FEASIBILITY_RTOL) {
                    x.to_vec()
                } else {
                    let s = radius / r;
                    center.iter().zip(&u).map(|(c, v)| c + s * v).collect()
                }
            }
            Self::L1Ball { center, radius } => {
                let u: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                if norm1(&u) <= radius * (1.0 + FEASIBILITY_RTOL) {
                    x.to_vec()
                } else {
                    let w = project_l1_ball_centered(&u, *radius);
                    center.iter().zip(&w).map(|(c, v)| c + v).collect()
                }
            }
        })
    }
}

/// Projection of `u` (with `|u|_1 > radius`) onto the centered l1 ball, by
/// sorting magnitudes and soft-thresholding at the simplex threshold.
fn project_l1_ball_centered(u: &[f64], radius: f64) -> Vec<f64> {
    let mut mags: Vec<f64> = u.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (k + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    u.iter()
        .map(|&v| v.signum() * (v.abs() - theta).max(0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn laplace_median_is_zero() {
        assert_eq!(laplace_quantile(0.5), 0.0);
        assert!(laplace_quantile(0.75) > 0.0);
        assert!((laplace_quantile(0.75) + laplace_quantile(0.25)).abs() < 1e-15);
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign_vec(&[0.5, -0.5]), vec![1.0, -1.0]);
        assert_eq!(sign_vec(&[0.0, -3.0]), vec![1.0, -1.0]);
        assert_eq!(sign_vec(&[0.0; 3]), vec![1.0; 3]);
        assert_eq!(sign_vec(&[-0.0]), vec![1.0]);
    }

    #[test]
    fn sphere_points_have_unit_l1_norm() {
        let mut rng = RngStream::new(1, 0, 0).rng();
        for d in [1, 2, 7, 100] {
            for _ in 0..200 {
                let z = sample_l1_sphere(d, &mut rng);
                assert_eq!(z.dim(), d);
                assert!((norm1(z.coords()) - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn d1_sphere_is_plus_minus_one() {
        let mut rng = RngStream::new(2, 0, 0).rng();
        for _ in 0..100 {
            let z = sample_l1_sphere(1, &mut rng);
            assert!(z.coords()[0] == 1.0 || z.coords()[0] == -1.0);
        }
    }

    #[test]
    fn ball_points_are_inside() {
        let mut rng = RngStream::new(3, 0, 0).rng();
        for d in [1, 3, 20] {
            for _ in 0..500 {
                assert!(norm1(&sample_l1_ball(d, &mut rng)) <= 1.0);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let b = FeasibleSet::new_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(b.project(&[2.0, -1.0]).unwrap(), vec![1.0, 0.0]);

        let e = FeasibleSet::euclidean_ball(vec![0.0, 0.0], 1.0).unwrap();
        let p = e.project(&[3.0, 4.0]).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);

        let l = FeasibleSet::l1_ball(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(l.project(&[0.5, 0.25]).unwrap(), vec![0.5, 0.25]);
    }

    #[test]
    fn l1_projection_matches_known_cases() {
        let l = FeasibleSet::l1_ball(vec![0.0, 0.0, 0.0], 1.0).unwrap();
        // Only the dominant coordinate survives.
        assert_eq!(l.project(&[5.0, 0.5, -0.2]).unwrap(), vec![1.0, 0.0, 0.0]);
        // Equal magnitudes share the budget.
        let p = l.project(&[2.0, -2.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, -0.5, 0.0]);
        let shifted = FeasibleSet::l1_ball(vec![1.0, 1.0], 1.0).unwrap();
        assert_eq!(shifted.project(&[4.0, 1.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let b = FeasibleSet::new_box(vec![0.0], vec![1.0]).unwrap();
        assert!(b.project(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn diameters() {
        let b = FeasibleSet::new_box(vec![0.0, 0.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(b.diameter(), 5.0);
        assert_eq!(FeasibleSet::euclidean_ball(vec![0.0; 4], 1.5).unwrap().diameter(), 3.0);
        assert_eq!(FeasibleSet::l1_ball(vec![0.0; 4], 1.0).unwrap().diameter(), 2.0);
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(FeasibleSet::new_box(vec![1.0], vec![0.0]).is_err());
        assert!(FeasibleSet::euclidean_ball(vec![0.0], 0.0).is_err());
        assert!(FeasibleSet::l1_ball(vec![], 1.0).is_err());
    }
}
