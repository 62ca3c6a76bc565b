use rand::Rng;

use super::{sample_mvn, sample_truncnorm, standard_normal_vector, BoxBounds, SamplingError};
use crate::numerics::{cholesky, invert_general, Matrix, SpdFactor, Vector};

/// Coordinate-wise Gibbs sampler for a normal restricted to a box, prepared
/// once for a fixed precision matrix `P` so that each call only pays for the
/// sweeps. The target is `N(mean, scale · P⁻¹)` restricted to the bounds.
#[derive(Debug, Clone)]
pub struct BoxGibbs {
    precision: Matrix,
    precision_factor: SpdFactor,
    // 1 / sqrt(P_ii)
    unit_sd: Vec<f64>,
}

impl BoxGibbs {
    pub fn from_precision(precision: Matrix) -> Result<Self, SamplingError> {
        let precision_factor = cholesky(&precision)?;
        let precision = precision_factor.reconstruct();
        let unit_sd = (0..precision.nrows())
            .map(|i| 1.0 / precision[(i, i)].sqrt())
            .collect();
        Ok(Self {
            precision,
            precision_factor,
            unit_sd,
        })
    }

    pub fn from_covariance(cov: &Matrix) -> Result<Self, SamplingError> {
        Self::from_precision(cholesky(cov)?.inverse())
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    /// Runs `sweeps` full coordinate passes starting from `state`, which must
    /// lie strictly inside `bounds`. With an unbounded box the result is an
    /// exact draw and `state` is only overwritten.
    pub fn run<R: Rng + ?Sized>(
        &self,
        mean: &Vector,
        scale: f64,
        bounds: &BoxBounds,
        state: &mut Vector,
        sweeps: usize,
        rng: &mut R,
    ) -> Result<(), SamplingError> {
        let n = self.dim();
        for len in [mean.len(), bounds.len(), state.len()] {
            if len != n {
                return Err(SamplingError::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(SamplingError::InvalidParameter(format!(
                "scale must be positive (got {scale})"
            )));
        }
        if bounds.is_unbounded() {
            let z = standard_normal_vector(n, rng);
            *state = mean + self.precision_factor.solve_upper(&z) * scale.sqrt();
            return Ok(());
        }
        if let Some(index) = bounds.first_violation(state) {
            return Err(SamplingError::InfeasibleStart { index });
        }
        let root_scale = scale.sqrt();
        let mut dev: Vec<f64> = (0..n).map(|i| state[i] - mean[i]).collect();
        for _ in 0..sweeps {
            for i in 0..n {
                let col = self.precision.column(i);
                let mut s = 0.0;
                for j in 0..n {
                    s += col[j] * dev[j];
                }
                let pii = col[i];
                s -= pii * dev[i];
                let cond_mean = mean[i] - s / pii;
                let x = sample_truncnorm(
                    cond_mean,
                    root_scale * self.unit_sd[i],
                    bounds.lower()[i],
                    bounds.upper()[i],
                    rng,
                )?;
                state[i] = x;
                dev[i] = x - mean[i];
            }
        }
        Ok(())
    }
}

/// `N(mean, cov)` restricted to the box; `init` must be strictly inside it.
pub fn sample_tmvn_box<R: Rng + ?Sized>(
    mean: &Vector,
    cov: &Matrix,
    bounds: &BoxBounds,
    init: &Vector,
    sweeps: usize,
    rng: &mut R,
) -> Result<Vector, SamplingError> {
    if cov.nrows() != mean.len() {
        return Err(SamplingError::DimensionMismatch {
            expected: mean.len(),
            found: cov.nrows(),
        });
    }
    if bounds.is_unbounded() {
        return sample_mvn(mean, &cholesky(cov)?, rng);
    }
    let gibbs = BoxGibbs::from_covariance(cov)?;
    let mut state = init.clone();
    gibbs.run(mean, 1.0, bounds, &mut state, sweeps, rng)?;
    Ok(state)
}

/// `x ~ N(mean, cov)` restricted to `lower < A x < upper` for invertible `A`,
/// sampled in the transformed coordinates `θ = A x`.
pub fn sample_mvn_under_linear_box<R: Rng + ?Sized>(
    mean: &Vector,
    cov: &Matrix,
    a: &Matrix,
    bounds: &BoxBounds,
    init: &Vector,
    sweeps: usize,
    rng: &mut R,
) -> Result<Vector, SamplingError> {
    let n = mean.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(SamplingError::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    if init.len() != n {
        return Err(SamplingError::DimensionMismatch {
            expected: n,
            found: init.len(),
        });
    }
    let a_inv = invert_general(a).map_err(|_| SamplingError::SingularTransform)?;
    let theta_mean = a * mean;
    let theta_cov = a * cov * a.transpose();
    let theta_init = a * init;
    if let Some(index) = bounds.first_violation(&theta_init) {
        return Err(SamplingError::InfeasibleStart { index });
    }
    let theta = sample_tmvn_box(&theta_mean, &theta_cov, bounds, &theta_init, sweeps, rng)?;
    Ok(a_inv * theta)
}
