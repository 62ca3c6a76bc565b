//! Dense linear algebra kernel.
//!
//! Matrices are nalgebra `DMatrix<f64>` values, which store entries
//! column-major. `vec` is therefore a reinterpretation of the storage and
//! `unvec` its inverse; all Kronecker-structured covariances in the crate
//! follow that column-major convention.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative pivot threshold for declaring a matrix not positive definite.
pub const SPD_PIVOT_TOLERANCE: f64 = 1e-12;

/// Relative asymmetry accepted before symmetrizing an input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {index} = {value:e})")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is singular")]
    Singular,
}

fn mismatch(expected: impl ToString, found: impl ToString) -> NumericsError {
    NumericsError::DimensionMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Lower-triangular Cholesky factor `L` of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactor {
    lower: Matrix,
}

impl SpdFactor {
    /// Factors `m`, symmetrizing it first. Zero-dimensional inputs are
    /// accepted and yield an empty factor.
    pub fn new(m: &Matrix) -> Result<Self, NumericsError> {
        let (rows, cols) = m.shape();
        if rows != cols {
            return Err(NumericsError::NotSquare { rows, cols });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        let n = rows;
        let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut asym = 0.0_f64;
        for j in 0..n {
            for i in (j + 1)..n {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOLERANCE * scale.max(1.0) {
            return Err(NumericsError::NotSymmetric(asym));
        }

        let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(m[(i, i)]));
        let threshold = SPD_PIVOT_TOLERANCE * max_diag;
        let mut lower = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= lower[(j, k)] * lower[(j, k)];
            }
            if d <= threshold || d <= 0.0 {
                return Err(NumericsError::NotPositiveDefinite { index: j, value: d });
            }
            let ljj = d.sqrt();
            lower[(j, j)] = ljj;
            for i in (j + 1)..n {
                // lower triangle of the symmetrized input
                let mut s = 0.5 * (m[(i, j)] + m[(j, i)]);
                for k in 0..j {
                    s -= lower[(i, k)] * lower[(j, k)];
                }
                lower[(i, j)] = s / ljj;
            }
        }
        Ok(Self { lower })
    }

    /// Wraps an already lower-triangular factor with a positive diagonal.
    pub fn from_lower(lower: Matrix) -> Result<Self, NumericsError> {
        let (rows, cols) = lower.shape();
        if rows != cols {
            return Err(NumericsError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            if !(lower[(i, i)] > 0.0) {
                return Err(NumericsError::NotPositiveDefinite {
                    index: i,
                    value: lower[(i, i)],
                });
            }
        }
        Ok(Self {
            lower: lower.lower_triangle(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        &self.lower * self.lower.transpose()
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[(i, k)] * b[k];
            }
            b[i] = s / self.lower[(i, i)];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[(k, i)] * y[k];
            }
            y[i] = s / self.lower[(i, i)];
        }
    }

    pub fn solve_vector(&self, b: &Vector) -> Result<Vector, NumericsError> {
        if b.len() != self.dim() {
            return Err(mismatch(self.dim(), b.len()));
        }
        let mut x = b.clone();
        self.forward_in_place(x.as_mut_slice());
        self.backward_in_place(x.as_mut_slice());
        Ok(x)
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix, NumericsError> {
        if b.nrows() != self.dim() {
            return Err(mismatch(
                format!("{} rows", self.dim()),
                format!("{} rows", b.nrows()),
            ));
        }
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            let s = col.as_mut_slice();
            self.forward_in_place(s);
            self.backward_in_place(s);
        }
        Ok(x)
    }

    /// The inverse of the factored matrix, obtained by solving against the
    /// identity.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = self
            .solve_matrix(&Matrix::identity(n, n))
            .expect("identity conforms");
        symmetrize_in_place(&mut inv);
        inv
    }

    /// `L z`: maps standard normal draws to draws with covariance `L Lᵀ`.
    pub fn mul_lower(&self, z: &Vector) -> Vector {
        &self.lower * z
    }

    /// `L⁻ᵀ z`: maps standard normal draws to draws with covariance
    /// `(L Lᵀ)⁻¹`, for a factor of a precision matrix.
    pub fn solve_upper(&self, z: &Vector) -> Vector {
        let mut x = z.clone();
        self.backward_in_place(x.as_mut_slice());
        x
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

pub fn cholesky(m: &Matrix) -> Result<SpdFactor, NumericsError> {
    SpdFactor::new(m)
}

/// Solves `m x = b` for every column of `b` given the factor of `m`.
pub fn solve_spd(f: &SpdFactor, b: &Matrix) -> Result<Matrix, NumericsError> {
    f.solve_matrix(b)
}

pub fn solve_spd_vector(f: &SpdFactor, b: &Vector) -> Result<Vector, NumericsError> {
    f.solve_vector(b)
}

/// Kronecker product; block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for l in 0..bc {
                for k in 0..br {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Column-major stacking.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Matrix, NumericsError> {
    if v.len() != rows * cols {
        return Err(mismatch(rows * cols, v.len()));
    }
    Ok(Matrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn symmetrize_in_place(m: &mut Matrix) {
    let n = m.nrows().min(m.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    symmetrize_in_place(&mut out);
    out
}

/// Inverse of a general square matrix via LU with partial pivoting.
pub fn invert_general(m: &Matrix) -> Result<Matrix, NumericsError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(NumericsError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    m.clone().lu().try_inverse().ok_or(NumericsError::Singular)
}

/// Gathers the listed columns of `m` in the given order.
pub fn select_columns(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), idx.len());
    for (c, &j) in idx.iter().enumerate() {
        out.set_column(c, &m.column(j));
    }
    out
}

/// Gathers the listed rows of `m` in the given order.
pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.ncols());
    for (r, &i) in idx.iter().enumerate() {
        out.set_row(r, &m.row(i));
    }
    out
}

/// Block-diagonal matrix `diag(a, b)`.
pub fn block_diag(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.nrows() + b.nrows();
    let m = a.ncols() + b.ncols();
    let mut out = Matrix::zeros(n, m);
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Ordinary least squares `(XᵀX)⁻¹ Xᵀ Y` for every column of `y`.
pub fn ols(x: &Matrix, y: &Matrix) -> Result<Matrix, NumericsError> {
    if x.nrows() != y.nrows() {
        return Err(mismatch(
            format!("{} rows", x.nrows()),
            format!("{} rows", y.nrows()),
        ));
    }
    let f = SpdFactor::new(&(x.transpose() * x))?;
    f.solve_matrix(&(x.transpose() * y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn random_spd(n: usize, rng: &mut impl Rng) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + Matrix::identity(n, n) * (n as f64) * 0.1
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(f.lower(), &Matrix::identity(3, 3));
    }

    #[test]
    fn cholesky_two_by_two_hand_expansion() {
        let m = Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky(&m).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert_relative_eq!(f.lower(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky(&m),
            Err(NumericsError::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn cholesky_rejects_asymmetric_and_non_square() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(cholesky(&m), Err(NumericsError::NotSymmetric(_))));
        assert!(matches!(
            cholesky(&Matrix::zeros(2, 3)),
            Err(NumericsError::NotSquare { .. })
        ));
    }

    #[test]
    fn cholesky_rejects_tiny_pivot_relative_to_diagonal() {
        // rank one up to a perturbation below the relative tolerance
        let m = Matrix::from_row_slice(2, 2, &[1e6, 1e6, 1e6, 1e6 + 1e-7]);
        assert!(cholesky(&m).is_err());
    }

    #[test]
    fn empty_factor_is_allowed() {
        let f = cholesky(&Matrix::zeros(0, 0)).unwrap();
        assert_eq!(f.dim(), 0);
        assert_eq!(f.solve_vector(&Vector::zeros(0)).unwrap().len(), 0);
    }

    #[test]
    fn solve_identity_and_back_substitution() {
        let f = cholesky(&Matrix::identity(2, 2)).unwrap();
        let b = Vector::from_vec(vec![3.0, -1.0]);
        assert_eq!(f.solve_vector(&b).unwrap(), b);

        let m = Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky(&m).unwrap();
        let b = Vector::from_vec(vec![8.0, 7.0]);
        let x = f.solve_vector(&b).unwrap();
        assert!((&m * &x - &b).norm() < 1e-10);
    }

    #[test]
    fn solve_dimension_mismatch() {
        let f = cholesky(&Matrix::identity(2, 2)).unwrap();
        assert!(matches!(
            f.solve_vector(&Vector::zeros(3)),
            Err(NumericsError::DimensionMismatch { .. })
        ));
        assert!(f.solve_matrix(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn kron_examples() {
        let a = Matrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let expected =
            Matrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 2.0, 1.0, 0.0, 2.0, 0.0]);
        assert_eq!(kron(&a, &b), expected);

        let b = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let bd = kron(&Matrix::identity(3, 3), &b);
        assert_eq!(bd, block_diag(&block_diag(&b, &b), &b));
        assert_eq!(kron(&b, &Matrix::identity(1, 1)), b);
    }

    #[test]
    fn vec_is_column_major() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert!(unvec(&vec(&m), 4, 1).is_ok());
        assert!(matches!(
            unvec(&vec(&m), 3, 1),
            Err(NumericsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spd_solve_random_up_to_fifty() {
        let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(11);
        for n in [1usize, 2, 5, 17, 50] {
            let m = random_spd(n, &mut rng);
            let f = cholesky(&m).unwrap();
            let rel = frobenius(&(f.reconstruct() - &m)) / frobenius(&m);
            assert!(rel < 1e-10, "n={n} rel={rel}");
            let b = Matrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = solve_spd(&f, &b).unwrap();
            let res = frobenius(&(&m * &x - &b)) / frobenius(&b);
            assert!(res < 1e-8, "n={n} residual={res}");
        }
    }

    #[test]
    fn precision_factor_sampling_map() {
        // L⁻ᵀ maps identity covariance to the inverse of L Lᵀ
        let m = Matrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky(&m).unwrap();
        let linv_t = Matrix::from_columns(&[
            f.solve_upper(&Vector::from_vec(vec![1.0, 0.0])),
            f.solve_upper(&Vector::from_vec(vec![0.0, 1.0])),
        ]);
        let cov = &linv_t * linv_t.transpose();
        assert_relative_eq!(cov, f.inverse(), epsilon = 1e-14);
        assert_relative_eq!(&m * f.inverse(), Matrix::identity(2, 2), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn unvec_inverts_vec(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
            prop_assert_eq!(unvec(&vec(&m), rows, cols).unwrap(), m);
        }

        #[test]
        fn vec_kron_identity(q in 1usize..7, p in 1usize..7, k in 1usize..7, seed in any::<u64>()) {
            let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(seed);
            let r = Matrix::from_fn(q, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = Matrix::from_fn(p, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lhs = vec(&(&r * &b));
            let rhs = kron(&Matrix::identity(k, k), &r) * vec(&b);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn cholesky_reconstructs(n in 1usize..12, seed in any::<u64>()) {
            let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(seed);
            let m = random_spd(n, &mut rng);
            let f = cholesky(&m).unwrap();
            prop_assert!(f.lower().diagonal().iter().all(|d| *d > 0.0));
            prop_assert!(frobenius(&(f.reconstruct() - &m)) / frobenius(&m) < 1e-10);
        }
    }
}
