//! Random samplers used by both Gibbs drivers.

mod tmvn;
mod truncnorm;
mod wishart;

pub use tmvn::{sample_mvn_under_linear_box, sample_tmvn_box, BoxGibbs};
pub use truncnorm::{normal_cdf, normal_quantile, sample_truncnorm, upper_tail};
pub use wishart::{
    sample_inverse_wishart, sample_matrix_normal, sample_matrix_normal_factored, InverseWishart,
    WishartDraw,
};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

use crate::numerics::{NumericsError, SpdFactor, Vector};

/// Seedable deterministic generator used throughout the crate.
pub type RngStream = rand_pcg::Pcg64Mcg;

pub fn rng_stream(seed: u64) -> RngStream {
    RngStream::seed_from_u64(seed)
}

/// Independent stream for worker/replication `index` of a run seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> RngStream {
    rng_stream(seed.wrapping_add(index))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty interval: lower {lower} is not below upper {upper}")]
    EmptyInterval { lower: f64, upper: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("starting point violates bound {index}")]
    InfeasibleStart { index: usize },
    #[error("transform matrix is singular")]
    SingularTransform,
    #[error("degrees of freedom {df} must exceed dimension - 1 = {min}")]
    InvalidDegreesOfFreedom { df: f64, min: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Coordinate-wise interval `lower[i] < x[i] < upper[i]`; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vector,
    upper: Vector,
}

impl BoxBounds {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, SamplingError> {
        if lower.len() != upper.len() {
            return Err(SamplingError::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            // also rejects NaN and (+inf, +inf)
            if !(l < u) || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(SamplingError::EmptyInterval {
                    lower: *l,
                    upper: *u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: Vector::from_element(n, f64::NEG_INFINITY),
            upper: Vector::from_element(n, f64::INFINITY),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|l| *l == f64::NEG_INFINITY)
            && self.upper.iter().all(|u| *u == f64::INFINITY)
    }

    /// Index of the first coordinate not strictly inside its interval.
    pub fn first_violation(&self, x: &Vector) -> Option<usize> {
        (0..self.len()).find(|&i| !(self.lower[i] < x[i] && x[i] < self.upper[i]))
    }

    pub fn contains_strict(&self, x: &Vector) -> bool {
        x.len() == self.len() && self.first_violation(x).is_none()
    }

    /// Moves each coordinate that is not strictly inside its interval just
    /// inside the violated face; feasible coordinates are left untouched.
    pub fn pull_inside(&self, x: &mut Vector) {
        for i in 0..self.len() {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l < x[i] && x[i] < u {
                continue;
            }
            let step = if l.is_finite() && u.is_finite() {
                1e-3 * (u - l)
            } else {
                1e-3
            };
            x[i] = if x[i] <= l { l + step } else { u - step };
            if !(l < x[i] && x[i] < u) {
                x[i] = if l.is_finite() && u.is_finite() {
                    0.5 * (l + u)
                } else if l.is_finite() {
                    l + 1.0
                } else {
                    u - 1.0
                };
            }
        }
    }
}

/// `rate / Gamma(shape, 1)`; mean `rate / (shape - 1)` for `shape > 1`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Result<f64, SamplingError> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(SamplingError::InvalidParameter(format!(
            "inverse gamma needs shape, rate > 0 (got {shape}, {rate})"
        )));
    }
    let gamma = Gamma::new(shape, 1.0)
        .map_err(|e| SamplingError::InvalidParameter(e.to_string()))?;
    loop {
        let g: f64 = gamma.sample(rng);
        if g > 0.0 {
            return Ok(rate / g);
        }
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `mean + L z` with `z` i.i.d. standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &Vector,
    cov_factor: &SpdFactor,
    rng: &mut R,
) -> Result<Vector, SamplingError> {
    if mean.len() != cov_factor.dim() {
        return Err(SamplingError::DimensionMismatch {
            expected: cov_factor.dim(),
            found: mean.len(),
        });
    }
    let z = standard_normal_vector(mean.len(), rng);
    Ok(mean + cov_factor.mul_lower(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cholesky, Matrix};

    #[test]
    fn inverse_gamma_positive_and_mean() {
        let mut rng = rng_stream(3);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = sample_inverse_gamma(3.0, 1.0, &mut rng).unwrap();
            assert!(v > 0.0);
            sum += v;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn inverse_gamma_rejects_bad_parameters() {
        let mut rng = rng_stream(0);
        assert!(matches!(
            sample_inverse_gamma(0.0, 1.0, &mut rng),
            Err(SamplingError::InvalidParameter(_))
        ));
        assert!(sample_inverse_gamma(1.0, -1.0, &mut rng).is_err());
        assert!(sample_inverse_gamma(f64::NAN, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mvn_moments() {
        let mut rng = rng_stream(5);
        let n = 1_000_000;
        let mu = Vector::from_vec(vec![1.5, -2.0]);
        let f = cholesky(&Matrix::identity(2, 2)).unwrap();
        let mut s = Vector::zeros(2);
        let mut ss = Matrix::zeros(2, 2);
        for _ in 0..n {
            let x = sample_mvn(&mu, &f, &mut rng).unwrap();
            let d = &x - &mu;
            s += &x;
            ss += &d * d.transpose();
        }
        let mean = s / n as f64;
        for i in 0..2 {
            assert!((mean[i] - mu[i]).abs() < 4.0 / (n as f64).sqrt());
        }
        let cov = ss / n as f64;
        let err = crate::numerics::frobenius(&(cov - Matrix::identity(2, 2)));
        assert!(err < 0.01, "cov err {err}");
    }

    #[test]
    fn mvn_dimension_mismatch() {
        let mut rng = rng_stream(0);
        let f = cholesky(&Matrix::identity(3, 3)).unwrap();
        assert!(matches!(
            sample_mvn(&Vector::zeros(2), &f, &mut rng),
            Err(SamplingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f64> = {
            let mut r = rng_stream(42);
            (0..8).map(|_| r.random::<f64>()).collect()
        };
        let b: Vec<f64> = {
            let mut r = rng_stream(42);
            (0..8).map(|_| r.random::<f64>()).collect()
        };
        assert_eq!(a, b);
        let c: f64 = substream(42, 1).random();
        assert_ne!(a[0], c);
    }

    #[test]
    fn box_bounds_rejects_equal_and_nan() {
        let v = |x: &[f64]| Vector::from_vec(x.to_vec());
        assert!(BoxBounds::new(v(&[0.0]), v(&[0.0])).is_err());
        assert!(BoxBounds::new(v(&[f64::NAN]), v(&[1.0])).is_err());
        assert!(BoxBounds::new(v(&[f64::NEG_INFINITY]), v(&[f64::INFINITY])).is_ok());
        assert!(BoxBounds::new(v(&[0.0, 1.0]), v(&[1.0])).is_err());
    }

    #[test]
    fn pull_inside_only_moves_violations() {
        let b = BoxBounds::new(
            Vector::from_vec(vec![0.0, f64::NEG_INFINITY, -1.0]),
            Vector::from_vec(vec![1.0, 2.0, f64::INFINITY]),
        )
        .unwrap();
        let mut x = Vector::from_vec(vec![0.5, 3.0, -1.0]);
        b.pull_inside(&mut x);
        assert_eq!(x[0], 0.5);
        assert!(b.contains_strict(&x));
        assert!(x[1] < 2.0 && x[1] > 1.9);
        assert!(x[2] > -1.0 && x[2] < -0.9);
    }
}
