//! The l1-randomized two-point gradient estimator, its sign-compressed wire
//! message, and Monte Carlo estimates of the smoothed surrogate
//! `F_h(x) = E f(x + hU)` with `U` uniform on the unit l1 ball.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::l1_geometry::{sample_l1_ball, sample_l1_sphere, sign, L1Direction};
use crate::objectives::Problem;
use crate::rng::{map_chunks, RngStream, StreamRng};
use crate::vecops::axpy;

/// A single worker's gradient estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate(pub Vec<f64>);

impl GradEstimate {
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(invalid("h", format!("perturbation must be positive and finite, got {h}")))
    }
}

/// The two query points `x + h*zeta` and `x - h*zeta`.
pub fn two_point_queries(x: &[f64], h: f64, zeta: &L1Direction) -> Result<(Vec<f64>, Vec<f64>)> {
    check_h(h)?;
    check_dim(x.len(), zeta.dim())?;
    Ok((axpy(x, h, zeta.coords()), axpy(x, -h, zeta.coords())))
}

/// `(d / 2h) * delta * s`, shared by the direct estimator and the decoder so
/// both produce bit-identical vectors.
fn scaled_signs(d: usize, h: f64, delta: f64, signs: impl Iterator<Item = f64>) -> GradEstimate {
    let scale = d as f64 / (2.0 * h) * delta;
    GradEstimate(signs.map(|s| scale * s).collect())
}

/// `g = (d / 2h) (y - y') sign(zeta)`.
pub fn grad_estimate(h: f64, y: f64, y_prime: f64, zeta: &L1Direction) -> Result<GradEstimate> {
    check_h(h)?;
    let d = zeta.dim();
    Ok(scaled_signs(d, h, y - y_prime, zeta.coords().iter().map(|&z| sign(z))))
}

/// What a worker sends to the server: the difference of its two function
/// values and one sign bit per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerMessage {
    pub delta: f64,
    /// Packed sign bits, LSB-first; bit `i` is set iff `zeta_i >= 0`.
    pub signs: Vec<u8>,
    pub d: usize,
}

impl WorkerMessage {
    pub fn encode(y: f64, y_prime: f64, zeta: &L1Direction) -> Self {
        let d = zeta.dim();
        let mut signs = vec![0u8; d.div_ceil(8)];
        for (i, &z) in zeta.coords().iter().enumerate() {
            if z >= 0.0 {
                signs[i / 8] |= 1 << (i % 8);
            }
        }
        Self {
            delta: y - y_prime,
            signs,
            d,
        }
    }

    /// Wire size in bytes: 8 for the delta plus one bit per coordinate.
    pub fn wire_size(d: usize) -> usize {
        8 + d.div_ceil(8)
    }

    pub fn bit(&self, i: usize) -> bool {
        self.signs[i / 8] >> (i % 8) & 1 == 1
    }

    /// Little-endian f64 delta followed by the sign bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::wire_size(self.d));
        out.extend_from_slice(&self.delta.to_le_bytes());
        out.extend_from_slice(&self.signs);
        out
    }

    pub fn from_bytes(bytes: &[u8], d: usize) -> Result<Self> {
        let expected = Self::wire_size(d);
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: bytes.len(),
            });
        }
        let delta = f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        Ok(Self {
            delta,
            signs: bytes[8..].to_vec(),
            d,
        })
    }

    /// Server-side reconstruction of the worker's estimate.
    pub fn decode(&self, d: usize, h: f64) -> Result<GradEstimate> {
        check_h(h)?;
        if self.d != d || self.signs.len() != d.div_ceil(8) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.d,
            });
        }
        Ok(scaled_signs(
            d,
            h,
            self.delta,
            (0..d).map(|i| if self.bit(i) { 1.0 } else { -1.0 }),
        ))
    }
}

/// The function whose smoothed surrogate is being estimated.
#[derive(Clone, Copy)]
pub enum Target<'a> {
    /// The population objective `f`.
    Population(&'a Problem),
    /// `f_c` with a fresh context per sample; same expectation as `Population`.
    Contextual(&'a Problem),
    /// An arbitrary deterministic function.
    Function {
        d: usize,
        f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    },
}

impl Target<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Target::Population(p) | Target::Contextual(p) => p.d,
            Target::Function { d, .. } => *d,
        }
    }

    /// Evaluates one realization at each point, drawing the context (if any)
    /// once from `rng` so both points share it.
    fn eval_pair(&self, rng: &mut StreamRng, a: &[f64], b: &[f64]) -> (f64, f64) {
        match self {
            Target::Population(p) => (
                p.population_value(a).expect("dimension checked"),
                p.population_value(b).expect("dimension checked"),
            ),
            Target::Contextual(p) => {
                let c = p.draw_context(rng);
                (p.eval_context_unchecked(&c.0, a), p.eval_context_unchecked(&c.0, b))
            }
            Target::Function { f, .. } => (f(a), f(b)),
        }
    }

    fn eval_one(&self, rng: &mut StreamRng, a: &[f64]) -> f64 {
        match self {
            Target::Population(p) => p.population_value(a).expect("dimension checked"),
            Target::Contextual(p) => {
                let c = p.draw_context(rng);
                p.eval_context_unchecked(&c.0, a)
            }
            Target::Function { f, .. } => f(a),
        }
    }
}

/// Monte Carlo access to the smoothed surrogate of a target.
#[derive(Clone, Copy)]
pub struct SmoothedOracle<'a> {
    pub target: Target<'a>,
    pub h: f64,
    pub samples: usize,
}

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Component-wise Monte Carlo mean vector with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McVector {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl McVector {
    /// An exactly known vector (zero standard error).
    pub fn exact(v: Vec<f64>) -> Self {
        let d = v.len();
        Self {
            mean: v,
            std_error: vec![0.0; d],
        }
    }
}

/// Streaming mean and centred second moment (Welford), merged pairwise in
/// a fixed order.
#[derive(Clone, Debug, Default)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, v: impl IntoIterator<Item = f64>) {
        self.n += 1;
        let n = self.n as f64;
        for ((mean, m2), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(v) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    fn merge(parts: Vec<Moments>, d: usize) -> Moments {
        parts.into_iter().fold(Moments::new(d), |mut acc, p| {
            if p.n == 0 {
                return acc;
            }
            let (na, nb) = (acc.n as f64, p.n as f64);
            let n = na + nb;
            for i in 0..d {
                let delta = p.mean[i] - acc.mean[i];
                acc.mean[i] += delta * nb / n;
                acc.m2[i] += p.m2[i] + delta * delta * na * nb / n;
            }
            acc.n += p.n;
            acc
        })
    }

    fn finish(&self) -> McVector {
        let n = self.n as f64;
        let std_error = self
            .m2
            .iter()
            .map(|m2| {
                if self.n < 2 {
                    f64::INFINITY
                } else {
                    (m2 / (n - 1.0) / n).sqrt()
                }
            })
            .collect();
        McVector {
            mean: self.mean.clone(),
            std_error,
        }
    }
}

impl SmoothedOracle<'_> {
    fn validate(&self, x: &[f64]) -> Result<()> {
        check_h(self.h)?;
        if self.samples == 0 {
            return Err(invalid("samples", "must be at least 1"));
        }
        check_dim(self.target.dim(), x.len())
    }

    /// Estimates `F_h(x)` by averaging `f(x + hU)` over `U` uniform on the
    /// unit l1 ball.
    pub fn value(&self, x: &[f64], stream: RngStream) -> Result<McEstimate> {
        self.validate(x)?;
        let d = x.len();
        let parts = map_chunks(stream, self.samples, |rng, count| {
            let mut m = Moments::new(1);
            for _ in 0..count {
                let u = sample_l1_ball(d, rng);
                let point = axpy(x, self.h, &u);
                m.push([self.target.eval_one(rng, &point)]);
            }
            m
        });
        let r = Moments::merge(parts, 1).finish();
        Ok(McEstimate {
            mean: r.mean[0],
            std_error: r.std_error[0],
        })
    }

    /// Estimates `grad F_h(x)` by averaging independent two-point estimates.
    pub fn gradient(&self, x: &[f64], stream: RngStream) -> Result<McVector> {
        self.validate(x)?;
        let d = x.len();
        let parts = map_chunks(stream, self.samples, |rng, count| {
            let mut m = Moments::new(d);
            for _ in 0..count {
                let zeta = sample_l1_sphere(d, rng);
                let (xp, xm) = two_point_queries(x, self.h, &zeta).expect("validated");
                let (y, yp) = self.target.eval_pair(rng, &xp, &xm);
                let g = grad_estimate(self.h, y, yp, &zeta).expect("validated");
                m.push(g.0);
            }
            m
        });
        Ok(Moments::merge(parts, d).finish())
    }
}

/// Free-function form of [`SmoothedOracle::value`].
pub fn smoothed_value_mc(oracle: &SmoothedOracle, x: &[f64], stream: RngStream) -> Result<McEstimate> {
    oracle.value(x, stream)
}

/// Free-function form of [`SmoothedOracle::gradient`].
pub fn smoothed_grad_mc(oracle: &SmoothedOracle, x: &[f64], stream: RngStream) -> Result<McVector> {
    oracle.gradient(x, stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(v: &[f64]) -> L1Direction {
        L1Direction::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn queries_are_symmetric() {
        let (p, m) = two_point_queries(&[0.0, 0.0], 0.1, &dir(&[1.0, 0.0])).unwrap();
        assert_eq!(p, vec![0.1, 0.0]);
        assert_eq!(m, vec![-0.1, 0.0]);
        let x = [0.3, -1.7, 2.2];
        let (p, m) = two_point_queries(&x, 0.25, &dir(&[0.2, -0.5, 0.3])).unwrap();
        for i in 0..3 {
            assert_eq!((p[i] + m[i]) / 2.0, x[i]);
        }
        assert!(two_point_queries(&[1.0, 1.0], 0.0, &dir(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn estimator_arithmetic() {
        // f(x) = <(1,2), x> at 0 with zeta = (0.5, -0.5): y - y' = -0.1.
        let zeta = dir(&[0.5, -0.5]);
        let y: f64 = 0.1 * (0.5 - 1.0);
        let yp = -y;
        assert!((y - yp + 0.1).abs() < 1e-15);
        let g = grad_estimate(0.1, y, yp, &zeta).unwrap();
        assert!((g.0[0] + 1.0).abs() < 1e-12 && (g.0[1] - 1.0).abs() < 1e-12);
        let g = grad_estimate(0.1, 2.0, 2.0, &zeta).unwrap();
        assert_eq!(g.0, vec![0.0, 0.0]);
        assert!(grad_estimate(-1.0, 0.0, 0.0, &zeta).is_err());
    }

    #[test]
    fn message_layout() {
        let m = WorkerMessage::encode(0.0, 0.1, &dir(&[0.5, -0.5]));
        assert_eq!(m.delta, -0.1);
        assert!(m.bit(0) && !m.bit(1));
        assert_eq!(m.signs, vec![0b01]);
        assert_eq!(WorkerMessage::wire_size(100), 21);
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 9);
        assert_eq!(&bytes[..8], &(-0.1f64).to_le_bytes());
        assert_eq!(WorkerMessage::from_bytes(&bytes, 2).unwrap(), m);
        assert!(WorkerMessage::from_bytes(&bytes, 9).is_err());
    }

    #[test]
    fn zero_coordinate_sets_bit() {
        let z = L1Direction::from_vec(vec![0.0, -1.0, 0.0]).unwrap();
        let m = WorkerMessage::encode(1.0, 0.0, &z);
        assert!(m.bit(0) && !m.bit(1) && m.bit(2));
    }

    #[test]
    fn decode_examples() {
        let m = WorkerMessage {
            delta: -0.1,
            signs: vec![0b01],
            d: 2,
        };
        let g = m.decode(2, 0.1).unwrap();
        assert!((g.0[0] + 1.0).abs() < 1e-12 && (g.0[1] - 1.0).abs() < 1e-12);
        let zero = WorkerMessage {
            delta: 0.0,
            signs: vec![0b10],
            d: 2,
        };
        assert!(zero.decode(2, 0.1).unwrap().0.iter().all(|v| *v == 0.0));
        assert!(m.decode(3, 0.1).is_err());
    }

    #[test]
    fn smoothed_value_of_linear_is_exact_in_mean() {
        let f = |x: &[f64]| 2.0 * x[0] - x[1] + 0.5;
        let oracle = SmoothedOracle {
            target: Target::Function { d: 2, f: &f },
            h: 0.7,
            samples: 50_000,
        };
        let x = [0.3, -0.4];
        let est = oracle.value(&x, RngStream::new(1, 0, 0)).unwrap();
        assert!((est.mean - f(&x)).abs() <= 4.0 * est.std_error);
    }

    #[test]
    fn oracle_validates_inputs() {
        let f = |_: &[f64]| 0.0;
        let mut oracle = SmoothedOracle {
            target: Target::Function { d: 2, f: &f },
            h: 0.0,
            samples: 10,
        };
        assert!(oracle.value(&[0.0, 0.0], RngStream::new(0, 0, 0)).is_err());
        oracle.h = 1.0;
        assert!(oracle.gradient(&[0.0], RngStream::new(0, 0, 0)).is_err());
    }
}
