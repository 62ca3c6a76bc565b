//! Linear inequality systems `K ≤ Hβ ≤ G` and their column partitions.

use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::numerics::{invert_general, select_columns, select_rows, Matrix, Vector};

/// Relative tolerance for declaring a pivot zero during rank detection.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RestrictionError {
    #[error("{what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("restriction matrix has rank {rank} < {q} rows")]
    RankDeficient { rank: usize, q: usize },
    #[error("empty restriction interval in row {row}, column {col}: lower {lower} >= upper {upper}")]
    EmptyInterval {
        row: usize,
        col: usize,
        lower: f64,
        upper: f64,
    },
    #[error("requested column subset {0:?} gives a singular block")]
    PreferredSingular(Vec<usize>),
    #[error("invalid column index {index} for {p} coefficients")]
    InvalidIndex { index: usize, p: usize },
    #[error("non-finite entry in restriction matrix")]
    NonFinite,
    #[error("restriction file: {0}")]
    Parse(String),
}

/// `K ≤ Hβ ≤ G` for a `p × k` coefficient matrix. `H` is `q × p` and the
/// bounds are `q × k`; `k = 1` is the univariate case.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionSystem {
    h: Matrix,
    lower: Matrix,
    upper: Matrix,
}

impl RestrictionSystem {
    pub fn new(h: Matrix, lower: Matrix, upper: Matrix) -> Result<Self, RestrictionError> {
        let q = h.nrows();
        if lower.shape() != upper.shape() || lower.nrows() != q {
            return Err(RestrictionError::ShapeMismatch {
                what: "bounds",
                expected: format!("{q} rows, equal shapes"),
                found: format!("{:?} and {:?}", lower.shape(), upper.shape()),
            });
        }
        if q == 0 || h.ncols() == 0 || lower.ncols() == 0 {
            return Err(RestrictionError::ShapeMismatch {
                what: "restriction matrix",
                expected: "at least one row and column".into(),
                found: format!("{:?}", h.shape()),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(RestrictionError::NonFinite);
        }
        for col in 0..lower.ncols() {
            for row in 0..q {
                let (l, u) = (lower[(row, col)], upper[(row, col)]);
                if !(l < u) || l == f64::INFINITY || u == f64::NEG_INFINITY {
                    return Err(RestrictionError::EmptyInterval {
                        row,
                        col,
                        lower: l,
                        upper: u,
                    });
                }
            }
        }
        Ok(Self { h, lower, upper })
    }

    pub fn univariate(h: Matrix, lower: Vector, upper: Vector) -> Result<Self, RestrictionError> {
        let q = lower.len();
        let lower = Matrix::from_column_slice(q, 1, lower.as_slice());
        let upper = Matrix::from_column_slice(upper.len(), 1, upper.as_slice());
        Self::new(h, lower, upper)
    }

    /// `Hβ ≤ G` with no lower bounds.
    pub fn upper_only(h: Matrix, upper: Matrix) -> Result<Self, RestrictionError> {
        let lower = Matrix::from_element(upper.nrows(), upper.ncols(), f64::NEG_INFINITY);
        Self::new(h, lower, upper)
    }

    pub fn q(&self) -> usize {
        self.h.nrows()
    }

    pub fn p(&self) -> usize {
        self.h.ncols()
    }

    pub fn k(&self) -> usize {
        self.lower.ncols()
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn upper(&self) -> &Matrix {
        &self.upper
    }

    pub fn rank(&self) -> usize {
        pivot_columns(&self.h).len()
    }

    /// Checks that the system is usable for `p` coefficients and `k` responses.
    pub fn validate(&self, p: usize, k: usize) -> Result<(), RestrictionError> {
        if self.p() != p || self.k() != k {
            return Err(RestrictionError::ShapeMismatch {
                what: "restriction system",
                expected: format!("{p} coefficients, {k} responses"),
                found: format!("{} coefficients, {} responses", self.p(), self.k()),
            });
        }
        if self.q() > p {
            return Err(RestrictionError::RankDeficient {
                rank: p,
                q: self.q(),
            });
        }
        let rank = self.rank();
        if rank < self.q() {
            return Err(RestrictionError::RankDeficient { rank, q: self.q() });
        }
        Ok(())
    }

    /// First `(row, col)` where `Hβ` leaves the bounds by more than a
    /// rounding-level slack.
    pub fn first_violation(&self, beta: &Matrix) -> Option<(usize, usize)> {
        let hb = &self.h * beta;
        for col in 0..hb.ncols() {
            for row in 0..hb.nrows() {
                let v = hb[(row, col)];
                let (l, u) = (self.lower[(row, col)], self.upper[(row, col)]);
                if !v.is_finite() || v < l - slack(l) || v > u + slack(u) {
                    return Some((row, col));
                }
            }
        }
        None
    }

    pub fn check_feasible(&self, beta: &Matrix) -> bool {
        self.first_violation(beta).is_none()
    }

    pub fn check_feasible_vector(&self, beta: &Vector) -> bool {
        self.check_feasible(&Matrix::from_column_slice(beta.len(), 1, beta.as_slice()))
    }

    pub fn to_json(&self, s: Option<&[usize]>) -> Value {
        let rows = |m: &Matrix| -> Value {
            Value::Array(
                (0..m.nrows())
                    .map(|i| Value::Array((0..m.ncols()).map(|j| bound_to_json(m[(i, j)])).collect()))
                    .collect(),
            )
        };
        let mut obj = serde_json::Map::new();
        obj.insert("H".into(), rows(&self.h));
        obj.insert("K".into(), rows(&self.lower));
        obj.insert("G".into(), rows(&self.upper));
        if let Some(s) = s {
            obj.insert("S".into(), s.iter().map(|i| Value::from(i + 1)).collect());
        }
        Value::Object(obj)
    }
}

fn slack(bound: f64) -> f64 {
    1e-12 * bound.abs().max(1.0)
}

fn bound_to_json(v: f64) -> Value {
    if v == f64::INFINITY {
        Value::from("+inf")
    } else if v == f64::NEG_INFINITY {
        Value::from("-inf")
    } else {
        Value::from(v)
    }
}

/// Columns chosen by Gaussian elimination with the largest available pivot
/// at each step (ties to the smallest column index). Stops at the numerical
/// rank, so the result has fewer than `rows` entries when `h` is deficient.
fn pivot_columns(h: &Matrix) -> Vec<usize> {
    let (q, p) = h.shape();
    let mut a = h.clone();
    let tol = RANK_TOLERANCE * h.amax().max(f64::MIN_POSITIVE);
    let mut used = vec![false; p];
    let mut chosen = Vec::with_capacity(q);
    for r in 0..q {
        let mut best: Option<(usize, usize, f64)> = None;
        for j in (0..p).filter(|&j| !used[j]) {
            for i in r..q {
                let v = a[(i, j)].abs();
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
        let Some((i, j, v)) = best else { break };
        if v <= tol {
            break;
        }
        a.swap_rows(r, i);
        let piv = a[(r, j)];
        for row in (r + 1)..q {
            let f = a[(row, j)] / piv;
            if f != 0.0 {
                for c in 0..p {
                    a[(row, c)] -= f * a[(r, c)];
                }
            }
        }
        used[j] = true;
        chosen.push(j);
    }
    chosen
}

/// Split of the coefficient indices into `S` (where `H_S` is square and
/// invertible) and its complement `S'`. Indices are 0-based and ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    s: Vec<usize>,
    s_prime: Vec<usize>,
    h_s: Matrix,
    h_s_prime: Matrix,
    h_s_inv: Matrix,
}

impl Partition {
    pub fn new(h: &Matrix, s: &[usize]) -> Result<Self, RestrictionError> {
        let (q, p) = h.shape();
        if s.len() != q {
            return Err(RestrictionError::ShapeMismatch {
                what: "column subset",
                expected: format!("{q} indices"),
                found: format!("{}", s.len()),
            });
        }
        let mut sorted = s.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(RestrictionError::InvalidIndex { index: w[0], p });
            }
        }
        if let Some(&bad) = sorted.iter().find(|&&i| i >= p) {
            return Err(RestrictionError::InvalidIndex { index: bad, p });
        }
        let s_prime: Vec<usize> = (0..p).filter(|i| sorted.binary_search(i).is_err()).collect();
        let h_s = select_columns(h, &sorted);
        // scale-aware singularity check on the block itself
        if pivot_columns(&h_s).len() < q {
            return Err(RestrictionError::PreferredSingular(sorted));
        }
        let h_s_inv =
            invert_general(&h_s).map_err(|_| RestrictionError::PreferredSingular(sorted.clone()))?;
        let h_s_prime = select_columns(h, &s_prime);
        Ok(Self {
            s: sorted,
            s_prime,
            h_s,
            h_s_prime,
            h_s_inv,
        })
    }

    pub fn s(&self) -> &[usize] {
        &self.s
    }

    pub fn s_prime(&self) -> &[usize] {
        &self.s_prime
    }

    pub fn h_s(&self) -> &Matrix {
        &self.h_s
    }

    pub fn h_s_prime(&self) -> &Matrix {
        &self.h_s_prime
    }

    pub fn h_s_inv(&self) -> &Matrix {
        &self.h_s_inv
    }

    pub fn p(&self) -> usize {
        self.s.len() + self.s_prime.len()
    }

    /// Rows of `beta` split into the `S` block and the `S'` block.
    pub fn split(&self, beta: &Matrix) -> (Matrix, Matrix) {
        (select_rows(beta, &self.s), select_rows(beta, &self.s_prime))
    }

    /// Inverse of [`Partition::split`].
    pub fn assemble(&self, beta_s: &Matrix, beta_s_prime: &Matrix) -> Matrix {
        let k = beta_s.ncols();
        let mut out = Matrix::zeros(self.p(), k);
        for (r, &i) in self.s.iter().enumerate() {
            out.row_mut(i).copy_from(&beta_s.row(r));
        }
        for (r, &i) in self.s_prime.iter().enumerate() {
            out.row_mut(i).copy_from(&beta_s_prime.row(r));
        }
        out
    }

    pub fn assemble_vector(&self, beta_s: &Vector, beta_s_prime: &Vector) -> Vector {
        let mut out = Vector::zeros(self.p());
        for (r, &i) in self.s.iter().enumerate() {
            out[i] = beta_s[r];
        }
        for (r, &i) in self.s_prime.iter().enumerate() {
            out[i] = beta_s_prime[r];
        }
        out
    }

    /// Columns of the design split as `(X_S, X_S')`.
    pub fn split_design(&self, x: &Matrix) -> (Matrix, Matrix) {
        (select_columns(x, &self.s), select_columns(x, &self.s_prime))
    }

    /// Bounds on `θ = H_S β_S` given `β_S'`: `(K − H_S'β_S', G − H_S'β_S')`.
    pub fn conditional_box(&self, sys: &RestrictionSystem, beta_s_prime: &Matrix) -> (Matrix, Matrix) {
        if self.s_prime.is_empty() {
            return (sys.lower().clone(), sys.upper().clone());
        }
        let shift = &self.h_s_prime * beta_s_prime;
        (sys.lower() - &shift, sys.upper() - &shift)
    }

    /// A `β_S` strictly satisfying the restrictions for the given `β_S'`.
    pub fn feasible_s_block(&self, sys: &RestrictionSystem, beta_s_prime: &Matrix) -> Matrix {
        let (lo, hi) = self.conditional_box(sys, beta_s_prime);
        let theta = lo.zip_map(&hi, interior_point);
        &self.h_s_inv * theta
    }

    /// A full `β` strictly inside the restrictions with `β_S' = 0`.
    pub fn feasible_point(&self, sys: &RestrictionSystem) -> Matrix {
        let zero = Matrix::zeros(self.s_prime.len(), sys.k());
        let beta_s = self.feasible_s_block(sys, &zero);
        self.assemble(&beta_s, &zero)
    }
}

fn interior_point(l: f64, u: f64) -> f64 {
    match (l.is_finite(), u.is_finite()) {
        (true, true) => 0.5 * (l + u),
        (true, false) => l + l.abs().max(1.0),
        (false, true) => u - u.abs().max(1.0),
        (false, false) => 0.0,
    }
}

/// Picks `S`. A requested subset is used when its block is invertible;
/// otherwise the error names it. Without a request the columns come from
/// pivoted elimination on `H`.
pub fn select_partition(
    sys: &RestrictionSystem,
    preferred: Option<&[usize]>,
) -> Result<Partition, RestrictionError> {
    if let Some(s) = preferred {
        return Partition::new(sys.h(), s);
    }
    let cols = pivot_columns(sys.h());
    if cols.len() < sys.q() {
        return Err(RestrictionError::RankDeficient {
            rank: cols.len(),
            q: sys.q(),
        });
    }
    Partition::new(sys.h(), &cols)
}

/// Restriction file contents: the system plus an optional 0-based `S`.
#[derive(Debug, Clone)]
pub struct RestrictionSpec {
    pub system: RestrictionSystem,
    pub s: Option<Vec<usize>>,
}

impl RestrictionSpec {
    pub fn partition(&self) -> Result<Partition, RestrictionError> {
        select_partition(&self.system, self.s.as_deref())
    }
}

fn parse_number(v: &Value) -> Result<f64, RestrictionError> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| RestrictionError::Parse(format!("bad number {n}"))),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            other => other
                .parse()
                .map_err(|_| RestrictionError::Parse(format!("bad number {s:?}"))),
        },
        Value::Null => Err(RestrictionError::Parse("null entry".into())),
        _ => Err(RestrictionError::Parse(format!("expected a number, got {v}"))),
    }
}

// Accepts a flat list (one column) or a list of rows.
fn parse_matrix(v: &Value, name: &str) -> Result<Matrix, RestrictionError> {
    let rows = v
        .as_array()
        .ok_or_else(|| RestrictionError::Parse(format!("{name} must be an array")))?;
    if rows.is_empty() {
        return Err(RestrictionError::Parse(format!("{name} is empty")));
    }
    if rows.iter().all(|r| !r.is_array()) {
        let vals = rows.iter().map(parse_number).collect::<Result<Vec<_>, _>>()?;
        return Ok(Matrix::from_column_slice(vals.len(), 1, &vals));
    }
    let parsed = rows
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| RestrictionError::Parse(format!("{name} mixes rows and scalars")))?
                .iter()
                .map(parse_number)
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cols = parsed[0].len();
    if parsed.iter().any(|r| r.len() != cols) {
        return Err(RestrictionError::Parse(format!("{name} has ragged rows")));
    }
    Ok(Matrix::from_fn(parsed.len(), cols, |i, j| parsed[i][j]))
}

/// Parses `{"H": .., "K": .., "G": .., "S": [1-based]}`; `R` is accepted
/// for `H`, `K` may be omitted, and infinities are the strings `"-inf"`/`"+inf"`.
pub fn restrictions_from_json(v: &Value) -> Result<RestrictionSpec, RestrictionError> {
    let obj = v
        .as_object()
        .ok_or_else(|| RestrictionError::Parse("expected a JSON object".into()))?;
    let h = obj
        .get("H")
        .or_else(|| obj.get("R"))
        .ok_or_else(|| RestrictionError::Parse("missing H".into()))?;
    let h = parse_matrix(h, "H")?;
    let upper = parse_matrix(
        obj.get("G")
            .ok_or_else(|| RestrictionError::Parse("missing G".into()))?,
        "G",
    )?;
    let system = match obj.get("K") {
        Some(k) if !k.is_null() => RestrictionSystem::new(h, parse_matrix(k, "K")?, upper)?,
        _ => RestrictionSystem::upper_only(h, upper)?,
    };
    let s = match obj.get("S") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for it in items {
                let i = it
                    .as_u64()
                    .ok_or_else(|| RestrictionError::Parse(format!("bad index {it}")))?;
                if i == 0 || i as usize > system.p() {
                    return Err(RestrictionError::InvalidIndex {
                        index: i as usize,
                        p: system.p(),
                    });
                }
                out.push(i as usize - 1);
            }
            Some(out)
        }
        Some(other) => return Err(RestrictionError::Parse(format!("bad S {other}"))),
    };
    Ok(RestrictionSpec { system, s })
}

pub fn load_restrictions(path: &Path) -> Result<RestrictionSpec, RestrictionError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RestrictionError::Parse(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| RestrictionError::Parse(format!("{}: {e}", path.display())))?;
    restrictions_from_json(&v)
}
