//! Single-response regression under `K ≤ Hβ ≤ G`: conjugate posterior
//! pieces, the partitioned collapsed Gibbs sampler and a square-H baseline.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{
    rng_stream, sample_inverse_gamma, standard_normal_vector, BoxBounds, BoxGibbs, SamplingError,
};
use crate::numerics::{
    cholesky, invert_general, ols, Matrix, NumericsError, SpdFactor, Vector,
};
use crate::restrictions::{select_partition, Partition, RestrictionError, RestrictionSystem};

pub const DEFAULT_INNER_SWEEPS: usize = 5;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Restriction(#[from] RestrictionError),
    #[error("posterior scale is not positive ({0}); inputs are inconsistent")]
    NonPositiveEta(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl EngineError {
    /// True when the model itself is infeasible or degenerate rather than
    /// the configuration being malformed.
    pub fn is_degenerate_model(&self) -> bool {
        matches!(
            self,
            EngineError::Restriction(
                RestrictionError::EmptyInterval { .. }
                    | RestrictionError::RankDeficient { .. }
                    | RestrictionError::PreferredSingular(_)
            ) | EngineError::NonPositiveEta(_)
                | EngineError::Numerics(NumericsError::NotPositiveDefinite { .. })
        )
    }
}

#[derive(Debug, Clone)]
pub struct RegressionData {
    pub x: Matrix,
    pub y: Vector,
}

impl RegressionData {
    pub fn new(x: Matrix, y: Vector) -> Result<Self, EngineError> {
        if x.nrows() != y.len() {
            return Err(EngineError::InvalidConfig(format!(
                "design has {} rows but response has {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(EngineError::InvalidConfig("empty design".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(EngineError::Numerics(NumericsError::NonFinite));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn ols(&self) -> Result<Vector, EngineError> {
        let y = Matrix::from_column_slice(self.n(), 1, self.y.as_slice());
        Ok(ols(&self.x, &y)?.column(0).into_owned())
    }
}

/// `σ² ~ IG(a/2, b/2)` and `β_S ~ N(μ_S, σ²C_S)`, `β_S' ~ N(μ_S', σ²C_S')`
/// independently, with blocks in partition order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSpec {
    pub a: f64,
    pub b: f64,
    pub mu_s: Vec<f64>,
    pub mu_s_prime: Vec<f64>,
    pub c_s: Vec<Vec<f64>>,
    pub c_s_prime: Vec<Vec<f64>>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize) -> Result<Matrix, EngineError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(EngineError::InvalidConfig(format!(
            "expected a {n}x{n} matrix"
        )));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl PriorSpec {
    pub fn new(
        a: f64,
        b: f64,
        mu_s: Vector,
        mu_s_prime: Vector,
        c_s: Matrix,
        c_s_prime: Matrix,
    ) -> Result<Self, EngineError> {
        let spec = Self {
            a,
            b,
            mu_s: mu_s.iter().copied().collect(),
            mu_s_prime: mu_s_prime.iter().copied().collect(),
            c_s: rows_of(&c_s),
            c_s_prime: rows_of(&c_s_prime),
        };
        spec.check()?;
        Ok(spec)
    }

    /// Prior means from OLS and `C_S = (X_SᵀX_S)⁻¹`, `C_S' = (X_S'ᵀX_S')⁻¹`.
    pub fn from_ols(
        data: &RegressionData,
        partition: &Partition,
        a: f64,
        b: f64,
    ) -> Result<Self, EngineError> {
        let beta = data.ols()?;
        let mu = |idx: &[usize]| Vector::from_iterator(idx.len(), idx.iter().map(|&i| beta[i]));
        let (x_s, x_sp) = partition.split_design(&data.x);
        let block = |x: &Matrix| -> Result<Matrix, EngineError> {
            if x.ncols() == 0 {
                return Ok(Matrix::zeros(0, 0));
            }
            Ok(cholesky(&x.tr_mul(x))?.inverse())
        };
        Self::new(
            a,
            b,
            mu(partition.s()),
            mu(partition.s_prime()),
            block(&x_s)?,
            block(&x_sp)?,
        )
    }

    /// Same prior with the means replaced (original coefficient order).
    pub fn with_mean(mut self, partition: &Partition, mu: &Vector) -> Self {
        self.mu_s = partition.s().iter().map(|&i| mu[i]).collect();
        self.mu_s_prime = partition.s_prime().iter().map(|&i| mu[i]).collect();
        self
    }

    pub fn q(&self) -> usize {
        self.mu_s.len()
    }

    pub fn mu_s(&self) -> Vector {
        Vector::from_vec(self.mu_s.clone())
    }

    pub fn mu_s_prime(&self) -> Vector {
        Vector::from_vec(self.mu_s_prime.clone())
    }

    pub fn c_s(&self) -> Result<Matrix, EngineError> {
        from_rows(&self.c_s, self.mu_s.len())
    }

    pub fn c_s_prime(&self) -> Result<Matrix, EngineError> {
        from_rows(&self.c_s_prime, self.mu_s_prime.len())
    }

    fn check(&self) -> Result<(), EngineError> {
        if !(self.a > 0.0 && self.a.is_finite()) || !(self.b > 0.0 && self.b.is_finite()) {
            return Err(EngineError::InvalidConfig(format!(
                "prior a and b must be positive (got {}, {})",
                self.a, self.b
            )));
        }
        cholesky(&self.c_s()?)?;
        cholesky(&self.c_s_prime()?)?;
        Ok(())
    }

    /// Prior mean of `σ²` when it exists, else 1.
    pub fn initial_sigma2(&self) -> f64 {
        if self.a > 2.0 {
            self.b / (self.a - 2.0)
        } else {
            1.0
        }
    }

    /// Full prior `(μ, C)` in original coefficient order.
    pub fn full(&self, partition: &Partition) -> Result<(Vector, Matrix), EngineError> {
        let p = partition.p();
        let mut mu = Vector::zeros(p);
        let mut c = Matrix::zeros(p, p);
        let (c_s, c_sp) = (self.c_s()?, self.c_s_prime()?);
        for (a, &i) in partition.s().iter().enumerate() {
            mu[i] = self.mu_s[a];
            for (b, &j) in partition.s().iter().enumerate() {
                c[(i, j)] = c_s[(a, b)];
            }
        }
        for (a, &i) in partition.s_prime().iter().enumerate() {
            mu[i] = self.mu_s_prime[a];
            for (b, &j) in partition.s_prime().iter().enumerate() {
                c[(i, j)] = c_sp[(a, b)];
            }
        }
        Ok((mu, c))
    }
}

/// Quantities of the collapsed posterior that do not change between
/// iterations.
#[derive(Debug, Clone)]
pub struct PosteriorCache {
    pub nu_tilde: f64,
    pub eta_tilde: f64,
    pub ctilde_s: Matrix,
    pub ctilde_s_prime: Matrix,
    pub w: Vector,
    pub mu_tilde_s_prime: Vector,
    pub cross: Matrix,
    ctilde_s_prime_factor: SpdFactor,
    // C̃_S W and C̃_S X_SᵀX_S', so that μ̃_S = ctilde_s_w − ctilde_s_cross β_S'
    ctilde_s_w: Vector,
    ctilde_s_cross: Matrix,
}

pub fn compute_posterior_cache(
    x_s: &Matrix,
    x_sp: &Matrix,
    y: &Vector,
    prior: &PriorSpec,
) -> Result<PosteriorCache, EngineError> {
    let n = y.len();
    if x_s.nrows() != n || x_sp.nrows() != n {
        return Err(EngineError::InvalidConfig("design and response lengths differ".into()));
    }
    if x_s.ncols() != prior.mu_s.len() || x_sp.ncols() != prior.mu_s_prime.len() {
        return Err(EngineError::InvalidConfig("prior blocks do not match the partition".into()));
    }
    let mu_s = prior.mu_s();
    let mu_sp = prior.mu_s_prime();
    let c_s_inv = cholesky(&prior.c_s()?)?.inverse();
    let c_sp_inv = cholesky(&prior.c_s_prime()?)?.inverse();

    let ctilde_s_factor = cholesky(&(x_s.tr_mul(x_s) + &c_s_inv))?;
    let ctilde_s = ctilde_s_factor.inverse();
    let w = x_s.tr_mul(y) + &c_s_inv * &mu_s;
    let cross = x_s.tr_mul(x_sp);
    let ctilde_s_cross = &ctilde_s * &cross;
    let ctilde_s_w = &ctilde_s * &w;

    let ctilde_sp_inv = x_sp.tr_mul(x_sp) + &c_sp_inv - cross.tr_mul(&ctilde_s_cross);
    let ctilde_sp_inv_factor = cholesky(&ctilde_sp_inv)?;
    let ctilde_s_prime = ctilde_sp_inv_factor.inverse();
    let rhs = &c_sp_inv * &mu_sp + x_sp.tr_mul(y) - cross.tr_mul(&ctilde_s_w);
    let mu_tilde_s_prime = ctilde_sp_inv_factor.solve_vector(&rhs)?;

    let nu_tilde = (n as f64 + prior.a) / 2.0;
    let eta_tilde = 0.5
        * (prior.b + y.dot(y) + mu_sp.dot(&(&c_sp_inv * &mu_sp)) + mu_s.dot(&(&c_s_inv * &mu_s))
            - mu_tilde_s_prime.dot(&rhs)
            - w.dot(&ctilde_s_w));
    if !(eta_tilde > 0.0) {
        return Err(EngineError::NonPositiveEta(eta_tilde));
    }
    let ctilde_s_prime_factor = cholesky(&ctilde_s_prime)?;
    Ok(PosteriorCache {
        nu_tilde,
        eta_tilde,
        ctilde_s,
        ctilde_s_prime,
        w,
        mu_tilde_s_prime,
        cross,
        ctilde_s_prime_factor,
        ctilde_s_w,
        ctilde_s_cross,
    })
}

impl PosteriorCache {
    /// Conditional mean of `β_S` given `β_S'`.
    pub fn mu_tilde_s(&self, beta_s_prime: &Vector) -> Vector {
        if beta_s_prime.is_empty() {
            return self.ctilde_s_w.clone();
        }
        &self.ctilde_s_w - &self.ctilde_s_cross * beta_s_prime
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub sigma2: f64,
    pub beta_s: Vector,
    pub beta_s_prime: Vector,
    // H_S β_S, kept to seed the next truncated draw
    theta: Vector,
}

/// One stored iteration in original coefficient order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub sigma2: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SamplerConfig {
    pub iters: usize,
    /// Defaults to 10% of `iters`.
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub inner_sweeps: usize,
}

impl SamplerConfig {
    pub fn new(iters: usize, seed: u64) -> Self {
        Self {
            iters,
            burn_in: None,
            seed,
            inner_sweeps: DEFAULT_INNER_SWEEPS,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn with_inner_sweeps(mut self, sweeps: usize) -> Self {
        self.inner_sweeps = sweeps;
        self
    }

    pub fn resolved_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iters / 10)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.iters == 0 {
            return Err(EngineError::InvalidConfig("iters must be at least 1".into()));
        }
        if self.resolved_burn_in() >= self.iters {
            return Err(EngineError::InvalidConfig(format!(
                "burn-in {} must be below iters {}",
                self.resolved_burn_in(),
                self.iters
            )));
        }
        if self.inner_sweeps == 0 {
            return Err(EngineError::InvalidConfig("inner sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct ChainTiming {
    pub total_seconds: f64,
    pub seconds_per_iteration: f64,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub draws: Vec<Draw>,
    pub burn_in: usize,
    pub seed: u64,
    pub config: SamplerConfig,
    pub timing: ChainTiming,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn kept(&self) -> &[Draw] {
        &self.draws[self.burn_in.min(self.draws.len())..]
    }

    pub fn p(&self) -> usize {
        self.draws.first().map_or(0, |d| d.beta.len())
    }

    pub fn beta_mean(&self) -> Vector {
        let kept = self.kept();
        let mut m = Vector::zeros(self.p());
        for d in kept {
            for (acc, b) in m.iter_mut().zip(&d.beta) {
                *acc += b;
            }
        }
        m / kept.len() as f64
    }

    pub fn sigma2_mean(&self) -> f64 {
        let kept = self.kept();
        kept.iter().map(|d| d.sigma2).sum::<f64>() / kept.len() as f64
    }

    /// Kept draws of one coefficient.
    pub fn beta_series(&self, j: usize) -> Vec<f64> {
        self.kept().iter().map(|d| d.beta[j]).collect()
    }

    pub fn sigma2_series(&self) -> Vec<f64> {
        self.kept().iter().map(|d| d.sigma2).collect()
    }
}

/// Partitioned collapsed Gibbs sampler, prepared for one data set.
#[derive(Debug, Clone)]
pub struct BksSampler {
    partition: Partition,
    cache: PosteriorCache,
    theta_gibbs: BoxGibbs,
    inner_sweeps: usize,
    // E[θ | β_S'] = theta_base − theta_slope β_S'
    theta_base: Vector,
    theta_slope: Matrix,
    lower: Vector,
    upper: Vector,
}

impl BksSampler {
    pub fn new(
        data: &RegressionData,
        system: &RestrictionSystem,
        partition: &Partition,
        prior: &PriorSpec,
        inner_sweeps: usize,
    ) -> Result<Self, EngineError> {
        system.validate(data.p(), 1)?;
        if partition.p() != data.p() || partition.s().len() != system.q() {
            return Err(EngineError::InvalidConfig("partition does not match the system".into()));
        }
        let (x_s, x_sp) = partition.split_design(&data.x);
        let cache = compute_posterior_cache(&x_s, &x_sp, &data.y, prior)?;
        // θ = H_S β_S has covariance σ² H_S C̃_S H_Sᵀ
        let hinv = partition.h_s_inv();
        let ctilde_s_inv = cholesky(&cache.ctilde_s)?.inverse();
        let precision = hinv.transpose() * ctilde_s_inv * hinv;
        let theta_gibbs = BoxGibbs::from_precision(crate::numerics::symmetrize(&precision))?;
        let h_s = partition.h_s();
        Ok(Self {
            theta_base: h_s * &cache.ctilde_s_w,
            theta_slope: h_s * &cache.ctilde_s_cross,
            lower: system.lower().column(0).into_owned(),
            upper: system.upper().column(0).into_owned(),
            partition: partition.clone(),
            cache,
            theta_gibbs,
            inner_sweeps,
        })
    }

    pub fn cache(&self) -> &PosteriorCache {
        &self.cache
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn initial_state(&self, prior: &PriorSpec) -> ChainState {
        // conditional mean at μ̃_S', moved just inside the box
        let beta_s_prime = self.cache.mu_tilde_s_prime.clone();
        let mut theta = self.partition.h_s() * self.cache.mu_tilde_s(&beta_s_prime);
        self.conditional_bounds(&beta_s_prime)
            .expect("validated system")
            .pull_inside(&mut theta);
        let beta_s = self.partition.h_s_inv() * &theta;
        ChainState {
            sigma2: prior.initial_sigma2(),
            beta_s,
            beta_s_prime,
            theta,
        }
    }

    fn conditional_bounds(&self, beta_s_prime: &Vector) -> Result<BoxBounds, EngineError> {
        let (lower, upper) = if beta_s_prime.is_empty() {
            (self.lower.clone(), self.upper.clone())
        } else {
            let shift = self.partition.h_s_prime() * beta_s_prime;
            (&self.lower - &shift, &self.upper - &shift)
        };
        Ok(BoxBounds::new(lower, upper)?)
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<(), EngineError> {
        let c = &self.cache;
        let sigma2 = sample_inverse_gamma(c.nu_tilde, c.eta_tilde, rng)?;
        let sd = sigma2.sqrt();
        let z = standard_normal_vector(c.mu_tilde_s_prime.len(), rng);
        let beta_s_prime = &c.mu_tilde_s_prime + c.ctilde_s_prime_factor.mul_lower(&z) * sd;
        let theta_mean = if beta_s_prime.is_empty() {
            self.theta_base.clone()
        } else {
            &self.theta_base - &self.theta_slope * &beta_s_prime
        };
        let bounds = self.conditional_bounds(&beta_s_prime)?;
        bounds.pull_inside(&mut state.theta);
        self.theta_gibbs.run(
            &theta_mean,
            sigma2,
            &bounds,
            &mut state.theta,
            self.inner_sweeps,
            rng,
        )?;
        state.beta_s = self.partition.h_s_inv() * &state.theta;
        state.beta_s_prime = beta_s_prime;
        state.sigma2 = sigma2;
        Ok(())
    }

    pub fn draw_of(&self, state: &ChainState) -> Draw {
        Draw {
            sigma2: state.sigma2,
            beta: self
                .partition
                .assemble_vector(&state.beta_s, &state.beta_s_prime)
                .iter()
                .copied()
                .collect(),
        }
    }
}

/// Runs the partitioned sampler. `partition` of `None` selects one automatically.
pub fn run_chain(
    data: &RegressionData,
    system: &RestrictionSystem,
    partition: Option<&Partition>,
    prior: &PriorSpec,
    config: &SamplerConfig,
) -> Result<Chain, EngineError> {
    config.validate()?;
    let owned;
    let partition = match partition {
        Some(p) => p,
        None => {
            owned = select_partition(system, None)?;
            &owned
        }
    };
    let sampler = BksSampler::new(data, system, partition, prior, config.inner_sweeps)?;
    let mut rng = rng_stream(config.seed);
    let mut state = sampler.initial_state(prior);
    let mut draws = Vec::with_capacity(config.iters);
    let start = Instant::now();
    for _ in 0..config.iters {
        sampler.step(&mut state, &mut rng)?;
        draws.push(sampler.draw_of(&state));
    }
    let total = start.elapsed().as_secs_f64();
    Ok(Chain {
        draws,
        burn_in: config.resolved_burn_in(),
        seed: config.seed,
        config: config.clone(),
        timing: ChainTiming {
            total_seconds: total,
            seconds_per_iteration: total / config.iters as f64,
        },
    })
}

/// Unpartitioned conjugate prior `β ~ N(μ, σ²C)`, `σ² ~ IG(a/2, b/2)`.
#[derive(Debug, Clone)]
pub struct FullPrior {
    pub a: f64,
    pub b: f64,
    pub mu: Vector,
    pub c: Matrix,
}

impl FullPrior {
    pub fn from_partitioned(prior: &PriorSpec, partition: &Partition) -> Result<Self, EngineError> {
        let (mu, c) = prior.full(partition)?;
        Ok(Self {
            a: prior.a,
            b: prior.b,
            mu,
            c,
        })
    }
}

/// Mean of `β` under the unrestricted conjugate posterior:
/// `(XᵀX + C⁻¹)⁻¹ (XᵀY + C⁻¹μ)`.
pub fn unrestricted_posterior_mean(
    data: &RegressionData,
    mu: &Vector,
    c: &Matrix,
) -> Result<Vector, EngineError> {
    let c_inv = cholesky(c)?.inverse();
    let lambda = data.x.tr_mul(&data.x) + &c_inv;
    Ok(cholesky(&lambda)?.solve_vector(&(data.x.tr_mul(&data.y) + c_inv * mu))?)
}

/// Coordinate Gibbs sampler on `θ = Hβ` for square invertible `H`, with
/// `σ²` drawn from its full conditional.
#[derive(Debug, Clone)]
pub struct GewekeSampler {
    h_inv: Matrix,
    h: Matrix,
    lower: Vector,
    upper: Vector,
    theta_gibbs: BoxGibbs,
    theta_mean: Vector,
    xtx: Matrix,
    xty: Vector,
    yty: f64,
    mu: Vector,
    c_inv: Matrix,
    shape: f64,
    b: f64,
    inner_sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct GewekeState {
    pub sigma2: f64,
    pub theta: Vector,
}

impl GewekeSampler {
    pub fn new(
        data: &RegressionData,
        system: &RestrictionSystem,
        prior: &FullPrior,
        inner_sweeps: usize,
    ) -> Result<Self, EngineError> {
        let h = system.h().clone();
        if h.nrows() != h.ncols() {
            return Err(EngineError::Numerics(NumericsError::NotSquare {
                rows: h.nrows(),
                cols: h.ncols(),
            }));
        }
        system.validate(data.p(), 1)?;
        let h_inv = invert_general(&h)?;
        let c_inv = cholesky(&prior.c)?.inverse();
        let xtx = data.x.tr_mul(&data.x);
        let xty = data.x.tr_mul(&data.y);
        let lambda = &xtx + &c_inv;
        let m = cholesky(&lambda)?.solve_vector(&(&xty + &c_inv * &prior.mu))?;
        let precision = crate::numerics::symmetrize(&(h_inv.transpose() * &lambda * &h_inv));
        Ok(Self {
            theta_mean: &h * m,
            theta_gibbs: BoxGibbs::from_precision(precision)?,
            lower: system.lower().column(0).into_owned(),
            upper: system.upper().column(0).into_owned(),
            h_inv,
            h,
            xtx,
            xty,
            yty: data.y.dot(&data.y),
            mu: prior.mu.clone(),
            c_inv,
            shape: (data.n() as f64 + prior.a + data.p() as f64) / 2.0,
            b: prior.b,
            inner_sweeps,
        })
    }

    pub fn initial_state(&self, sigma2: f64) -> GewekeState {
        let bounds = BoxBounds::new(self.lower.clone(), self.upper.clone())
            .expect("validated bounds");
        let mut theta = self.theta_mean.clone();
        bounds.pull_inside(&mut theta);
        GewekeState { sigma2, theta }
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &mut GewekeState, rng: &mut R) -> Result<(), EngineError> {
        let beta = &self.h_inv * &state.theta;
        let rss = self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.xtx * &beta));
        let dev = &beta - &self.mu;
        let quad = dev.dot(&(&self.c_inv * &dev));
        let rate = 0.5 * (self.b + rss.max(0.0) + quad);
        state.sigma2 = sample_inverse_gamma(self.shape, rate, rng)?;
        let bounds = BoxBounds::new(self.lower.clone(), self.upper.clone())?;
        self.theta_gibbs.run(
            &self.theta_mean,
            state.sigma2,
            &bounds,
            &mut state.theta,
            self.inner_sweeps,
            rng,
        )?;
        Ok(())
    }

    pub fn draw_of(&self, state: &GewekeState) -> Draw {
        Draw {
            sigma2: state.sigma2,
            beta: (&self.h_inv * &state.theta).iter().copied().collect(),
        }
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }
}

pub fn geweke_baseline_chain(
    data: &RegressionData,
    system: &RestrictionSystem,
    prior: &FullPrior,
    config: &SamplerConfig,
) -> Result<Chain, EngineError> {
    config.validate()?;
    let sampler = GewekeSampler::new(data, system, prior, config.inner_sweeps)?;
    let init = if prior.a > 2.0 { prior.b / (prior.a - 2.0) } else { 1.0 };
    let mut state = sampler.initial_state(init);
    let mut rng = rng_stream(config.seed);
    let mut draws = Vec::with_capacity(config.iters);
    let start = Instant::now();
    for _ in 0..config.iters {
        sampler.step(&mut state, &mut rng)?;
        draws.push(sampler.draw_of(&state));
    }
    let total = start.elapsed().as_secs_f64();
    Ok(Chain {
        draws,
        burn_in: config.resolved_burn_in(),
        seed: config.seed,
        config: config.clone(),
        timing: ChainTiming {
            total_seconds: total,
            seconds_per_iteration: total / config.iters as f64,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::select_columns;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, p: usize, seed: u64) -> RegressionData {
        let mut rng = rng_stream(seed);
        let x = Matrix::from_fn(n, p, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        });
        let beta = Vector::from_fn(p, |i, _| i as f64 - 1.0);
        let e = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x * beta + e;
        RegressionData::new(x, y).unwrap()
    }

    fn simple_system(p: usize) -> RestrictionSystem {
        // β_1 + β_2 ≤ 10 and β_3 ≤ 10: effectively slack
        let mut h = Matrix::zeros(2, p);
        h[(0, 1)] = 1.0;
        h[(0, 2)] = 1.0;
        h[(1, 3)] = 1.0;
        RestrictionSystem::upper_only(h, Matrix::from_element(2, 1, 10.0)).unwrap()
    }

    #[test]
    fn trivial_cache_values() {
        let x_s = Matrix::identity(2, 2);
        let x_sp = Matrix::zeros(2, 0);
        let y = Vector::zeros(2);
        let prior = PriorSpec::new(
            1.0,
            1.0,
            Vector::zeros(2),
            Vector::zeros(0),
            Matrix::identity(2, 2),
            Matrix::zeros(0, 0),
        )
        .unwrap();
        let c = compute_posterior_cache(&x_s, &x_sp, &y, &prior).unwrap();
        assert!((&c.ctilde_s - Matrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert_eq!(c.w, Vector::zeros(2));
        assert!((c.eta_tilde - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nu_tilde_is_half_of_n_plus_a() {
        let data = random_data(20, 5, 1);
        let sys = simple_system(5);
        let part = select_partition(&sys, None).unwrap();
        let prior = PriorSpec::from_ols(&data, &part, 6.0, 1.0).unwrap();
        let (x_s, x_sp) = part.split_design(&data.x);
        let c = compute_posterior_cache(&x_s, &x_sp, &data.y, &prior).unwrap();
        assert_eq!(c.nu_tilde, 13.0);
    }

    // Joint conjugate posterior built without partitioning, then marginalised.
    #[test]
    fn cache_matches_joint_posterior() {
        let data = random_data(30, 5, 2);
        let sys = simple_system(5);
        let part = select_partition(&sys, None).unwrap();
        let mut prior = PriorSpec::from_ols(&data, &part, 3.0, 2.0).unwrap();
        prior.mu_s = vec![0.3, -0.2];
        prior.c_s = vec![vec![2.0, 0.4], vec![0.4, 1.0]];
        let (x_s, x_sp) = part.split_design(&data.x);
        let cache = compute_posterior_cache(&x_s, &x_sp, &data.y, &prior).unwrap();

        let order: Vec<usize> = part.s().iter().chain(part.s_prime()).copied().collect();
        let x = select_columns(&data.x, &order);
        let q = part.s().len();
        let p = order.len();
        let mut c = Matrix::zeros(p, p);
        c.view_mut((0, 0), (q, q)).copy_from(&prior.c_s().unwrap());
        c.view_mut((q, q), (p - q, p - q))
            .copy_from(&prior.c_s_prime().unwrap());
        let mu = Vector::from_iterator(p, prior.mu_s.iter().chain(&prior.mu_s_prime).copied());
        let c_inv = c.clone().try_inverse().unwrap();
        let lambda = x.transpose() * &x + &c_inv;
        let lambda_inv = lambda.clone().try_inverse().unwrap();
        let m = &lambda_inv * (x.transpose() * &data.y + &c_inv * &mu);
        let eta = 0.5
            * (prior.b + data.y.dot(&data.y) + mu.dot(&(&c_inv * &mu)) - m.dot(&(&lambda * &m)));

        let marg_cov = lambda_inv.view((q, q), (p - q, p - q)).into_owned();
        assert!((&cache.ctilde_s_prime - marg_cov).amax() < 1e-8);
        assert!((&cache.mu_tilde_s_prime - m.rows(q, p - q)).amax() < 1e-8);
        assert!((cache.eta_tilde - eta).abs() < 1e-8 * eta);
        let cond_prec = lambda.view((0, 0), (q, q)).into_owned();
        assert!((cache.ctilde_s.clone().try_inverse().unwrap() - cond_prec).amax() < 1e-8);
        let bsp = Vector::from_vec(vec![0.5, 1.5, -1.0]);
        // E[β_S | β_S'] = m_S − Λ_SS⁻¹ Λ_SS' (β_S' − m_S')
        let lss_inv = lambda.view((0, 0), (q, q)).into_owned().try_inverse().unwrap();
        let expect = m.rows(0, q) - lss_inv * lambda.view((0, q), (q, p - q)) * (&bsp - m.rows(q, p - q));
        assert!((cache.mu_tilde_s(&bsp) - expect).amax() < 1e-8);
    }

    #[test]
    fn chain_is_feasible_and_deterministic() {
        let data = random_data(20, 5, 3);
        let h = Matrix::from_row_slice(
            3,
            5,
            &[
                0.0, 1.0, 1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 1.0, -1.0, //
                0.0, 0.0, 1.0, 0.0, 1.0,
            ],
        );
        let sys =
            RestrictionSystem::upper_only(h, Matrix::from_column_slice(3, 1, &[-0.5, 0.2, 2.2]))
                .unwrap();
        let part = select_partition(&sys, Some(&[2, 3, 4])).unwrap();
        let prior = PriorSpec::from_ols(&data, &part, 3.0, 1.0).unwrap();
        let cfg = SamplerConfig::new(2000, 9);
        let a = run_chain(&data, &sys, Some(&part), &prior, &cfg).unwrap();
        let b = run_chain(&data, &sys, Some(&part), &prior, &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.burn_in, 200);
        for d in &a.draws {
            assert!(d.sigma2 > 0.0);
            assert!(sys.check_feasible_vector(&Vector::from_vec(d.beta.clone())));
        }
        assert!(a.timing.seconds_per_iteration > 0.0);
    }

    #[test]
    fn single_iteration_chain() {
        let data = random_data(20, 5, 4);
        let sys = simple_system(5);
        let part = select_partition(&sys, None).unwrap();
        let prior = PriorSpec::from_ols(&data, &part, 3.0, 1.0).unwrap();
        let chain = run_chain(&data, &sys, None, &prior, &SamplerConfig::new(1, 0)).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain.burn_in, 0);
        assert!(sys.check_feasible_vector(&Vector::from_vec(chain.draws[0].beta.clone())));
    }

    #[test]
    fn config_rejects_burn_in_past_end() {
        let cfg = SamplerConfig::new(10, 0).with_burn_in(10);
        assert!(matches!(cfg.validate(), Err(EngineError::InvalidConfig(_))));
    }

    #[test]
    fn geweke_requires_square_matrix() {
        let data = random_data(20, 5, 5);
        let sys = simple_system(5);
        let prior = FullPrior {
            a: 3.0,
            b: 1.0,
            mu: Vector::zeros(5),
            c: Matrix::identity(5, 5),
        };
        let err = geweke_baseline_chain(&data, &sys, &prior, &SamplerConfig::new(10, 0)).unwrap_err();
        assert!(matches!(err, EngineError::Numerics(NumericsError::NotSquare { .. })));
    }

    #[test]
    fn geweke_unbounded_rows_follow_unconstrained_conditional() {
        // H = I with every bound infinite: the chain targets the plain
        // conjugate posterior, so its mean must match the closed form.
        let data = random_data(40, 3, 6);
        let h = Matrix::identity(3, 3);
        let sys = RestrictionSystem::upper_only(h, Matrix::from_element(3, 1, f64::INFINITY)).unwrap();
        let prior = FullPrior {
            a: 3.0,
            b: 1.0,
            mu: Vector::zeros(3),
            c: Matrix::identity(3, 3) * 10.0,
        };
        let chain = geweke_baseline_chain(&data, &sys, &prior, &SamplerConfig::new(40_000, 1)).unwrap();
        let exact = unrestricted_posterior_mean(&data, &prior.mu, &prior.c).unwrap();
        let mean = chain.beta_mean();
        for j in 0..3 {
            let s = chain.beta_series(j);
            let sd = (s.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
            assert!((mean[j] - exact[j]).abs() < 4.0 * sd / (s.len() as f64).sqrt(), "coef {j}");
        }
    }
}
