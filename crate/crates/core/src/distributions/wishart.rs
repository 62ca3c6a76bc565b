use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{standard_normal_vector, SamplingError};
use crate::numerics::{cholesky, unvec, Matrix, SpdFactor};

/// One inverse Wishart draw together with its inverse.
#[derive(Debug, Clone)]
pub struct WishartDraw {
    pub sigma: Matrix,
    pub precision: Matrix,
}

/// Inverse Wishart `IW(df, scale)` with mean `scale / (df - k - 1)`.
/// Draws use the Bartlett decomposition of `W(df, scale⁻¹)` and invert.
#[derive(Debug, Clone)]
pub struct InverseWishart {
    df: f64,
    inv_scale_factor: SpdFactor,
    chi: Vec<ChiSquared<f64>>,
}

impl InverseWishart {
    pub fn new(df: f64, scale: &Matrix) -> Result<Self, SamplingError> {
        let k = scale.nrows();
        let min = k as f64 - 1.0;
        if !(df > min) || !df.is_finite() {
            return Err(SamplingError::InvalidDegreesOfFreedom { df, min });
        }
        let inv_scale_factor = cholesky(&cholesky(scale)?.inverse())?;
        let chi = (0..k)
            .map(|i| {
                ChiSquared::new(df - i as f64)
                    .map_err(|e| SamplingError::InvalidParameter(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            df,
            inv_scale_factor,
            chi,
        })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn dim(&self) -> usize {
        self.chi.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WishartDraw, SamplingError> {
        let k = self.dim();
        let mut a = Matrix::zeros(k, k);
        for i in 0..k {
            a[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample(StandardNormal);
            }
        }
        // W = (L A)(L A)ᵀ and L A is already its Cholesky factor.
        let la = self.inv_scale_factor.lower() * a;
        let factor = SpdFactor::from_lower(la)?;
        let precision = factor.reconstruct();
        let sigma = factor.inverse();
        Ok(WishartDraw { sigma, precision })
    }
}

pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &Matrix,
    rng: &mut R,
) -> Result<Matrix, SamplingError> {
    Ok(InverseWishart::new(df, scale)?.sample(rng)?.sigma)
}

/// `MN(m, row_cov, col_cov)`: `vec(X) ~ N(vec(m), col_cov ⊗ row_cov)`.
pub fn sample_matrix_normal<R: Rng + ?Sized>(
    m: &Matrix,
    col_cov: &Matrix,
    row_cov: &Matrix,
    rng: &mut R,
) -> Result<Matrix, SamplingError> {
    let row = cholesky(row_cov)?;
    let col = cholesky(col_cov)?;
    sample_matrix_normal_factored(m, &row, &col, rng)
}

/// As [`sample_matrix_normal`] with both covariances already factored.
pub fn sample_matrix_normal_factored<R: Rng + ?Sized>(
    m: &Matrix,
    row_factor: &SpdFactor,
    col_factor: &SpdFactor,
    rng: &mut R,
) -> Result<Matrix, SamplingError> {
    let (p, k) = m.shape();
    if row_factor.dim() != p {
        return Err(SamplingError::DimensionMismatch {
            expected: p,
            found: row_factor.dim(),
        });
    }
    if col_factor.dim() != k {
        return Err(SamplingError::DimensionMismatch {
            expected: k,
            found: col_factor.dim(),
        });
    }
    let z = unvec(&standard_normal_vector(p * k, rng), p, k)?;
    Ok(m + row_factor.lower() * z * col_factor.lower().transpose())
}
