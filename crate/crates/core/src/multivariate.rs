//! Multi-response regression `Y = XB + E`, rows of `E` i.i.d. `N(0, Σ)`,
//! under `K ≤ RB ≤ G` applied column by column.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    rng_stream, sample_matrix_normal_factored, BoxBounds, BoxGibbs, InverseWishart,
};
use crate::numerics::{cholesky, kron, ols, unvec, vec, Matrix, NumericsError, SpdFactor};
use crate::restrictions::{select_partition, Partition, RestrictionSystem};
use crate::univariate::{ChainTiming, EngineError, SamplerConfig};

#[derive(Debug, Clone)]
pub struct MvData {
    pub x: Matrix,
    pub y: Matrix,
}

impl MvData {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self, EngineError> {
        if x.nrows() != y.nrows() {
            return Err(EngineError::InvalidConfig(format!(
                "design has {} rows but responses have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
            return Err(EngineError::InvalidConfig("empty design or response".into()));
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

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    pub fn ols(&self) -> Result<Matrix, EngineError> {
        Ok(ols(&self.x, &self.y)?)
    }

    /// Residual cross-product `(Y − XB̂)ᵀ(Y − XB̂)` at the OLS fit.
    pub fn residual_cross_product(&self) -> Result<Matrix, EngineError> {
        let e = &self.y - &self.x * self.ols()?;
        Ok(e.tr_mul(&e))
    }
}

/// `Σ ~ IW(r, Q)`, `B_S | Σ ~ MN(M_S, D_S, Σ)`, `B_S' | Σ ~ MN(M_S', D_S', Σ)`.
#[derive(Debug, Clone)]
pub struct PriorSpecMV {
    pub r: f64,
    pub q: Matrix,
    pub m_s: Matrix,
    pub m_s_prime: Matrix,
    pub d_s: Matrix,
    pub d_s_prime: Matrix,
}

impl PriorSpecMV {
    pub fn new(
        r: f64,
        q: Matrix,
        m_s: Matrix,
        m_s_prime: Matrix,
        d_s: Matrix,
        d_s_prime: Matrix,
    ) -> Result<Self, EngineError> {
        let k = q.nrows();
        if !(r > k as f64 - 1.0) || !r.is_finite() {
            return Err(EngineError::InvalidConfig(format!(
                "prior degrees of freedom {r} must exceed {}",
                k as f64 - 1.0
            )));
        }
        if m_s.ncols() != k || m_s_prime.ncols() != k {
            return Err(EngineError::InvalidConfig("prior means must have k columns".into()));
        }
        if d_s.nrows() != m_s.nrows() || d_s_prime.nrows() != m_s_prime.nrows() {
            return Err(EngineError::InvalidConfig("prior row covariances do not match means".into()));
        }
        cholesky(&q)?;
        cholesky(&d_s)?;
        cholesky(&d_s_prime)?;
        Ok(Self {
            r,
            q,
            m_s,
            m_s_prime,
            d_s,
            d_s_prime,
        })
    }

    /// Means from OLS, `D` blocks `(X_BᵀX_B)⁻¹`, and `Q = RSS / q_divisor`.
    pub fn from_ols(
        data: &MvData,
        partition: &Partition,
        r: f64,
        q_divisor: f64,
    ) -> Result<Self, EngineError> {
        if !(q_divisor > 0.0) {
            return Err(EngineError::InvalidConfig("Q divisor must be positive".into()));
        }
        let b = data.ols()?;
        let (m_s, m_sp) = partition.split(&b);
        let (x_s, x_sp) = partition.split_design(&data.x);
        let block = |x: &Matrix| -> Result<Matrix, EngineError> {
            if x.ncols() == 0 {
                return Ok(Matrix::zeros(0, 0));
            }
            Ok(cholesky(&x.tr_mul(x))?.inverse())
        };
        let q = data.residual_cross_product()? / q_divisor;
        Self::new(r, q, m_s, m_sp, block(&x_s)?, block(&x_sp)?)
    }

    pub fn k(&self) -> usize {
        self.q.nrows()
    }

    /// Prior mean of `Σ` when it exists, else `Q`.
    pub fn initial_sigma(&self) -> Matrix {
        let k = self.k() as f64;
        if self.r > k + 1.0 {
            &self.q / (self.r - k - 1.0)
        } else {
            self.q.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorCacheMV {
    pub df_post: f64,
    pub v: Matrix,
    pub dtilde_s: Matrix,
    pub dtilde_s_prime: Matrix,
    pub w: Matrix,
    pub mtilde_s_prime: Matrix,
    pub cross: Matrix,
    dtilde_s_prime_factor: SpdFactor,
    dtilde_s_w: Matrix,
    dtilde_s_cross: Matrix,
}

pub fn compute_posterior_cache_mv(
    x_s: &Matrix,
    x_sp: &Matrix,
    y: &Matrix,
    prior: &PriorSpecMV,
) -> Result<PosteriorCacheMV, EngineError> {
    let n = y.nrows();
    if x_s.nrows() != n || x_sp.nrows() != n {
        return Err(EngineError::InvalidConfig("design and response lengths differ".into()));
    }
    if x_s.ncols() != prior.m_s.nrows() || x_sp.ncols() != prior.m_s_prime.nrows() {
        return Err(EngineError::InvalidConfig("prior blocks do not match the partition".into()));
    }
    if y.ncols() != prior.k() {
        return Err(EngineError::InvalidConfig("prior scale does not match responses".into()));
    }
    let d_s_inv = cholesky(&prior.d_s)?.inverse();
    let d_sp_inv = cholesky(&prior.d_s_prime)?.inverse();

    let dtilde_s = cholesky(&(&d_s_inv + x_s.tr_mul(x_s)))?.inverse();
    let w = x_s.tr_mul(y) + &d_s_inv * &prior.m_s;
    let cross = x_s.tr_mul(x_sp);
    let dtilde_s_cross = &dtilde_s * &cross;
    let dtilde_s_w = &dtilde_s * &w;

    let dtilde_sp_inv = &d_sp_inv + x_sp.tr_mul(x_sp) - cross.tr_mul(&dtilde_s_cross);
    let dtilde_sp_inv_factor = cholesky(&dtilde_sp_inv)?;
    let dtilde_s_prime = dtilde_sp_inv_factor.inverse();
    let rhs = &d_sp_inv * &prior.m_s_prime + x_sp.tr_mul(y) - cross.tr_mul(&dtilde_s_w);
    let mtilde_s_prime = dtilde_sp_inv_factor.solve_matrix(&rhs)?;

    let mut v = &prior.q + y.tr_mul(y) + prior.m_s_prime.tr_mul(&(&d_sp_inv * &prior.m_s_prime))
        + prior.m_s.tr_mul(&(&d_s_inv * &prior.m_s))
        - w.tr_mul(&dtilde_s_w)
        - mtilde_s_prime.tr_mul(&rhs);
    crate::numerics::symmetrize_in_place(&mut v);
    cholesky(&v)?;
    Ok(PosteriorCacheMV {
        df_post: n as f64 + prior.r,
        v,
        dtilde_s,
        dtilde_s_prime_factor: cholesky(&dtilde_s_prime)?,
        dtilde_s_prime,
        w,
        mtilde_s_prime,
        cross,
        dtilde_s_w,
        dtilde_s_cross,
    })
}

impl PosteriorCacheMV {
    pub fn mtilde_s(&self, b_s_prime: &Matrix) -> Matrix {
        if b_s_prime.nrows() == 0 {
            return self.dtilde_s_w.clone();
        }
        &self.dtilde_s_w - &self.dtilde_s_cross * b_s_prime
    }
}

#[derive(Debug, Clone)]
pub struct ChainStateMV {
    pub sigma: Matrix,
    pub b_s: Matrix,
    pub b_s_prime: Matrix,
    // vec(R_S B_S)
    theta: crate::numerics::Vector,
}

/// One stored iteration; both matrices column-major in original order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawMV {
    pub sigma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ChainMV {
    pub draws: Vec<DrawMV>,
    pub p: usize,
    pub k: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub config: SamplerConfig,
    pub timing: ChainTiming,
}

impl ChainMV {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn kept(&self) -> &[DrawMV] {
        &self.draws[self.burn_in.min(self.draws.len())..]
    }

    pub fn beta_of(&self, d: &DrawMV) -> Matrix {
        Matrix::from_column_slice(self.p, self.k, &d.beta)
    }

    pub fn sigma_of(&self, d: &DrawMV) -> Matrix {
        Matrix::from_column_slice(self.k, self.k, &d.sigma)
    }

    pub fn beta_mean(&self) -> Matrix {
        let kept = self.kept();
        let mut acc = vec![0.0; self.p * self.k];
        for d in kept {
            for (a, b) in acc.iter_mut().zip(&d.beta) {
                *a += b;
            }
        }
        Matrix::from_column_slice(self.p, self.k, &acc) / kept.len() as f64
    }

    pub fn sigma_mean(&self) -> Matrix {
        let kept = self.kept();
        let mut acc = vec![0.0; self.k * self.k];
        for d in kept {
            for (a, b) in acc.iter_mut().zip(&d.sigma) {
                *a += b;
            }
        }
        Matrix::from_column_slice(self.k, self.k, &acc) / kept.len() as f64
    }

    /// Kept draws of `B[i, j]`.
    pub fn beta_series(&self, i: usize, j: usize) -> Vec<f64> {
        let idx = j * self.p + i;
        self.kept().iter().map(|d| d.beta[idx]).collect()
    }

    pub fn sigma_series(&self, i: usize, j: usize) -> Vec<f64> {
        let idx = j * self.k + i;
        self.kept().iter().map(|d| d.sigma[idx]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BksSamplerMV {
    system: RestrictionSystem,
    partition: Partition,
    cache: PosteriorCacheMV,
    wishart: InverseWishart,
    // R_S⁻ᵀ D̃_S⁻¹ R_S⁻¹
    theta_row_precision: Matrix,
    inner_sweeps: usize,
}

impl BksSamplerMV {
    pub fn new(
        data: &MvData,
        system: &RestrictionSystem,
        partition: &Partition,
        prior: &PriorSpecMV,
        inner_sweeps: usize,
    ) -> Result<Self, EngineError> {
        system.validate(data.p(), data.k())?;
        if partition.p() != data.p() || partition.s().len() != system.q() {
            return Err(EngineError::InvalidConfig("partition does not match the system".into()));
        }
        let (x_s, x_sp) = partition.split_design(&data.x);
        let cache = compute_posterior_cache_mv(&x_s, &x_sp, &data.y, prior)?;
        let wishart = InverseWishart::new(cache.df_post, &cache.v)?;
        let hinv = partition.h_s_inv();
        let dtilde_s_inv = cholesky(&cache.dtilde_s)?.inverse();
        let theta_row_precision =
            crate::numerics::symmetrize(&(hinv.transpose() * dtilde_s_inv * hinv));
        Ok(Self {
            system: system.clone(),
            partition: partition.clone(),
            cache,
            wishart,
            theta_row_precision,
            inner_sweeps,
        })
    }

    pub fn cache(&self) -> &PosteriorCacheMV {
        &self.cache
    }

    pub fn initial_state(&self, prior: &PriorSpecMV) -> ChainStateMV {
        // conditional mean at M̃_S', moved just inside the box
        let b_s_prime = self.cache.mtilde_s_prime.clone();
        let mut theta = vec(&(self.partition.h_s() * self.cache.mtilde_s(&b_s_prime)));
        let (lo, hi) = self.partition.conditional_box(&self.system, &b_s_prime);
        BoxBounds::new(vec(&lo), vec(&hi))
            .expect("validated system")
            .pull_inside(&mut theta);
        let b_s = self.partition.h_s_inv()
            * unvec(&theta, self.partition.s().len(), self.system.k()).expect("conforming");
        ChainStateMV {
            sigma: prior.initial_sigma(),
            b_s,
            b_s_prime,
            theta,
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainStateMV, rng: &mut R) -> Result<(), EngineError> {
        let c = &self.cache;
        let draw = self.wishart.sample(rng)?;
        let sigma_factor = cholesky(&draw.sigma)?;
        let b_s_prime = if c.mtilde_s_prime.nrows() == 0 {
            c.mtilde_s_prime.clone()
        } else {
            sample_matrix_normal_factored(&c.mtilde_s_prime, &c.dtilde_s_prime_factor, &sigma_factor, rng)?
        };
        let mean_s = c.mtilde_s(&b_s_prime);
        let theta_mean = vec(&(self.partition.h_s() * &mean_s));
        let (lo, hi) = self.partition.conditional_box(&self.system, &b_s_prime);
        let bounds = BoxBounds::new(vec(&lo), vec(&hi))?;
        let precision = kron(&draw.precision, &self.theta_row_precision);
        let gibbs = BoxGibbs::from_precision(precision)?;
        bounds.pull_inside(&mut state.theta);
        gibbs.run(&theta_mean, 1.0, &bounds, &mut state.theta, self.inner_sweeps, rng)?;
        let q = self.partition.s().len();
        let k = self.system.k();
        state.b_s = self.partition.h_s_inv() * unvec(&state.theta, q, k)?;
        state.b_s_prime = b_s_prime;
        state.sigma = draw.sigma;
        Ok(())
    }

    pub fn draw_of(&self, state: &ChainStateMV) -> DrawMV {
        DrawMV {
            sigma: state.sigma.as_slice().to_vec(),
            beta: self
                .partition
                .assemble(&state.b_s, &state.b_s_prime)
                .as_slice()
                .to_vec(),
        }
    }
}

pub fn run_chain_mv(
    data: &MvData,
    system: &RestrictionSystem,
    partition: Option<&Partition>,
    prior: &PriorSpecMV,
    config: &SamplerConfig,
) -> Result<ChainMV, EngineError> {
    config.validate()?;
    let owned;
    let partition = match partition {
        Some(p) => p,
        None => {
            owned = select_partition(system, None)?;
            &owned
        }
    };
    let sampler = BksSamplerMV::new(data, system, partition, prior, config.inner_sweeps)?;
    let mut rng = rng_stream(config.seed);
    let mut state = sampler.initial_state(prior);
    let mut draws = Vec::with_capacity(config.iters);
    let start = Instant::now();
    for _ in 0..config.iters {
        sampler.step(&mut state, &mut rng)?;
        draws.push(sampler.draw_of(&state));
    }
    let total = start.elapsed().as_secs_f64();
    Ok(ChainMV {
        draws,
        p: data.p(),
        k: data.k(),
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
    use crate::univariate::{compute_posterior_cache, PriorSpec};
    use rand_distr::StandardNormal;

    fn random_mv(n: usize, p: usize, k: usize, seed: u64) -> MvData {
        let mut rng = rng_stream(seed);
        let x = Matrix::from_fn(n, p, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        });
        let b = Matrix::from_fn(p, k, |i, j| i as f64 - j as f64 * 0.5);
        let e = Matrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        MvData::new(x.clone(), &x * b + e).unwrap()
    }

    fn slack_system(p: usize, k: usize) -> RestrictionSystem {
        let mut h = Matrix::zeros(2, p);
        h[(0, 1)] = 1.0;
        h[(1, 2)] = 1.0;
        h[(1, 1)] = -1.0;
        RestrictionSystem::upper_only(h, Matrix::from_element(2, k, 50.0)).unwrap()
    }

    #[test]
    fn trivial_cache_values() {
        let prior = PriorSpecMV::new(
            3.0,
            Matrix::identity(2, 2),
            Matrix::zeros(2, 2),
            Matrix::zeros(0, 2),
            Matrix::identity(2, 2),
            Matrix::zeros(0, 0),
        )
        .unwrap();
        let c = compute_posterior_cache_mv(
            &Matrix::identity(2, 2),
            &Matrix::zeros(2, 0),
            &Matrix::zeros(2, 2),
            &prior,
        )
        .unwrap();
        assert!((&c.dtilde_s - Matrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert_eq!(c.w, Matrix::zeros(2, 2));
        assert_eq!(c.df_post, 5.0);
    }

    #[test]
    fn single_response_reduces_to_univariate_cache() {
        let data = random_mv(25, 4, 1, 3);
        let sys = slack_system(4, 1);
        let part = select_partition(&sys, None).unwrap();
        let prior = PriorSpecMV::from_ols(&data, &part, 4.0, 25.0).unwrap();
        let (x_s, x_sp) = part.split_design(&data.x);
        let mv = compute_posterior_cache_mv(&x_s, &x_sp, &data.y, &prior).unwrap();
        let uni_prior = PriorSpec::new(
            prior.r,
            prior.q[(0, 0)],
            prior.m_s.column(0).into_owned(),
            prior.m_s_prime.column(0).into_owned(),
            prior.d_s.clone(),
            prior.d_s_prime.clone(),
        )
        .unwrap();
        let y = data.y.column(0).into_owned();
        let uni = compute_posterior_cache(&x_s, &x_sp, &y, &uni_prior).unwrap();
        assert!((mv.v[(0, 0)] - 2.0 * uni.eta_tilde).abs() < 1e-10 * mv.v[(0, 0)]);
        assert!((&mv.dtilde_s_prime - &uni.ctilde_s_prime).amax() < 1e-10);
        assert!((mv.mtilde_s_prime.column(0) - &uni.mu_tilde_s_prime).amax() < 1e-10);
        assert!((&mv.dtilde_s - &uni.ctilde_s).amax() < 1e-10);
    }

    // Matrix-normal / inverse-Wishart conjugacy on the unpartitioned model.
    #[test]
    fn scale_matrix_matches_joint_conjugate_update() {
        let data = random_mv(30, 5, 3, 4);
        let sys = slack_system(5, 3);
        let part = select_partition(&sys, None).unwrap();
        let mut prior = PriorSpecMV::from_ols(&data, &part, 5.0, 10.0).unwrap();
        prior.m_s[(0, 1)] += 0.7;
        prior.m_s_prime[(1, 2)] -= 0.4;
        let (x_s, x_sp) = part.split_design(&data.x);
        let cache = compute_posterior_cache_mv(&x_s, &x_sp, &data.y, &prior).unwrap();

        let order: Vec<usize> = part.s().iter().chain(part.s_prime()).copied().collect();
        let x = select_columns(&data.x, &order);
        let (q, p) = (part.s().len(), order.len());
        let mut d = Matrix::zeros(p, p);
        d.view_mut((0, 0), (q, q)).copy_from(&prior.d_s);
        d.view_mut((q, q), (p - q, p - q)).copy_from(&prior.d_s_prime);
        let mut m = Matrix::zeros(p, 3);
        m.view_mut((0, 0), (q, 3)).copy_from(&prior.m_s);
        m.view_mut((q, 0), (p - q, 3)).copy_from(&prior.m_s_prime);
        let d_inv = d.try_inverse().unwrap();
        let lambda = x.transpose() * &x + &d_inv;
        let post_mean = lambda.clone().try_inverse().unwrap() * (x.transpose() * &data.y + &d_inv * &m);
        let resid = &data.y - &x * &post_mean;
        let dev = &post_mean - &m;
        let v = &prior.q + resid.transpose() * resid + dev.transpose() * &d_inv * dev;
        assert!((&cache.v - &v).amax() < 1e-8 * v.amax());
        let lambda_inv = lambda.try_inverse().unwrap();
        assert!((&cache.dtilde_s_prime - lambda_inv.view((q, q), (p - q, p - q))).amax() < 1e-8);
        assert!((&cache.mtilde_s_prime - post_mean.rows(q, p - q)).amax() < 1e-8);
    }

    #[test]
    fn chain_feasible_spd_and_deterministic() {
        let data = random_mv(20, 5, 2, 5);
        let h = Matrix::from_row_slice(
            3,
            5,
            &[
                0.0, 1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, -1.0, 1.0,
            ],
        );
        let g = Matrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 0.0, 0.5, 1.0]);
        let sys = RestrictionSystem::upper_only(h, g).unwrap();
        let part = select_partition(&sys, None).unwrap();
        let prior = PriorSpecMV::from_ols(&data, &part, 2.0, 20.0).unwrap();
        let cfg = SamplerConfig::new(1500, 17);
        let a = run_chain_mv(&data, &sys, Some(&part), &prior, &cfg).unwrap();
        let b = run_chain_mv(&data, &sys, Some(&part), &prior, &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
        for d in &a.draws {
            assert!(cholesky(&a.sigma_of(d)).is_ok());
            assert!(sys.check_feasible(&a.beta_of(d)));
            let s = a.sigma_of(d);
            assert_eq!(s[(0, 1)], s[(1, 0)]);
        }
        let m = a.beta_mean();
        assert!(m.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn square_restriction_has_empty_complement() {
        let data = random_mv(20, 3, 2, 6);
        let sys = RestrictionSystem::upper_only(
            Matrix::identity(3, 3),
            Matrix::from_element(3, 2, 100.0),
        )
        .unwrap();
        let part = select_partition(&sys, None).unwrap();
        assert!(part.s_prime().is_empty());
        let prior = PriorSpecMV::from_ols(&data, &part, 3.0, 20.0).unwrap();
        let chain = run_chain_mv(&data, &sys, None, &prior, &SamplerConfig::new(1, 1)).unwrap();
        assert_eq!(chain.len(), 1);
        assert!(sys.check_feasible(&chain.beta_of(&chain.draws[0])));
    }

    #[test]
    fn vec_of_transformed_block_matches_kronecker() {
        let r = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let b = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let lhs = vec(&(&r * &b));
        let rhs = kron(&Matrix::identity(3, 3), &r) * vec(&b);
        assert!((lhs - rhs).amax() < 1e-12);
    }
}
