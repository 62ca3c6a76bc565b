//! Simulation studies and real-data analyses built on the two engines.
//!
//! Replication `k` draws its data from `substream(seed, k)` and takes its
//! chain seeds from the same stream, so reports are reproducible from the
//! seed alone and independent of how replications are scheduled.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{multivariate_names, summarize, univariate_names, DrawTable, ParameterSummary};
use crate::distributions::{rng_stream, standard_normal_vector, substream, RngStream};
use crate::io::Dataset;
use crate::multivariate::{run_chain_mv, ChainMV, MvData, PriorSpecMV};
use crate::numerics::{cholesky, Matrix, Vector};
use crate::restrictions::{Partition, RestrictionSystem};
use crate::univariate::{
    geweke_baseline_chain, run_chain, unrestricted_posterior_mean, Chain, EngineError, FullPrior,
    PriorSpec, RegressionData, SamplerConfig, DEFAULT_INNER_SWEEPS,
};

/// Salt for the stream that generates a shared design in fixed-design mode.
const FIXED_DESIGN_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

pub const EXAMPLE1_TRUTH: [f64; 5] = [-0.5, 1.0, -2.0, 3.0, 4.0];
pub const EXAMPLE1_SIGMA2: f64 = 1.0;
pub const SIMULATION_N: usize = 20;

/// Coefficient matrix of the multivariate simulation, rows are covariates.
pub const EXAMPLE2_TRUTH: [[f64; 2]; 5] = [
    [2.0, -1.0],
    [-1.0, -1.5],
    [0.5, 1.0],
    [1.0, 1.0],
    [0.5, 0.7],
];
pub const EXAMPLE2_SIGMA: [[f64; 2]; 2] = [[1.0, 0.5], [0.5, 1.0]];

pub const RENT_PRIOR_MEAN: [f64; 5] = [37.63, 130.0, 123.0, 0.0, -1.153];

pub const DELTA_GRID: [f64; 11] = [-1.0, -0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mean squared errors must be positive, got {unrestricted} and {restricted}")]
    NonPositiveMse { unrestricted: f64, restricted: f64 },
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Diagnostics(#[from] crate::diagnostics::DiagnosticsError),
}

impl ExperimentError {
    pub fn is_degenerate_model(&self) -> bool {
        matches!(self, ExperimentError::Engine(e) if e.is_degenerate_model())
    }
}

/// `(1/m) Σₖ Σⱼ (β̂ⱼₖ − βⱼ)²` over replication rows.
pub fn mse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64, ExperimentError> {
    if estimates.is_empty() {
        return Err(ExperimentError::ShapeMismatch("no replications".into()));
    }
    let mut total = 0.0;
    for (k, row) in estimates.iter().enumerate() {
        if row.len() != truth.len() {
            return Err(ExperimentError::ShapeMismatch(format!(
                "replication {k} has {} values, truth has {}",
                row.len(),
                truth.len()
            )));
        }
        total += row
            .iter()
            .zip(truth)
            .map(|(e, t)| (e - t) * (e - t))
            .sum::<f64>();
    }
    Ok(total / estimates.len() as f64)
}

/// Matrix form: squared Frobenius distance averaged over replications.
pub fn mse_mv(estimates: &[Matrix], truth: &Matrix) -> Result<f64, ExperimentError> {
    let rows: Vec<Vec<f64>> = estimates
        .iter()
        .map(|m| {
            if m.shape() != truth.shape() {
                Err(ExperimentError::ShapeMismatch(format!(
                    "estimate {:?} vs truth {:?}",
                    m.shape(),
                    truth.shape()
                )))
            } else {
                Ok(m.as_slice().to_vec())
            }
        })
        .collect::<Result<_, _>>()?;
    mse(&rows, truth.as_slice())
}

pub fn relative_efficiency(mse_unrestricted: f64, mse_restricted: f64) -> Result<f64, ExperimentError> {
    if !(mse_unrestricted > 0.0) || !(mse_restricted > 0.0) {
        return Err(ExperimentError::NonPositiveMse {
            unrestricted: mse_unrestricted,
            restricted: mse_restricted,
        });
    }
    Ok(mse_unrestricted / mse_restricted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bks,
    GewekeBaseline,
    Unrestricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    /// New covariates every replication.
    Fresh,
    /// One design drawn once from a dedicated stream and reused.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Restriction {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub replications: usize,
    pub iters: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_sweeps")]
    pub inner_sweeps: usize,
    #[serde(default = "default_design")]
    pub design: DesignMode,
    /// Worker threads; `None` uses every available core.
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_sweeps() -> usize {
    DEFAULT_INNER_SWEEPS
}

fn default_design() -> DesignMode {
    DesignMode::Fresh
}

impl SimulationConfig {
    pub fn for_scale(scale: Scale, seed: u64) -> Self {
        let (replications, iters) = match scale {
            Scale::Desk => (200, 5_000),
            Scale::Paper => (20_000, 10_000),
        };
        Self {
            n: SIMULATION_N,
            replications,
            iters,
            burn_in: None,
            seed,
            inner_sweeps: DEFAULT_INNER_SWEEPS,
            design: DesignMode::Fresh,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.replications == 0 {
            return Err(ExperimentError::InvalidConfig("replications must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(ExperimentError::InvalidConfig("n must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(ExperimentError::InvalidConfig("jobs must be at least 1".into()));
        }
        self.chain_config(0).validate()?;
        Ok(())
    }

    fn chain_config(&self, seed: u64) -> SamplerConfig {
        let cfg = SamplerConfig::new(self.iters, seed).with_inner_sweeps(self.inner_sweeps);
        match self.burn_in {
            Some(b) => cfg.with_burn_in(b),
            None => cfg,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParameterEstimate {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub coefficients: Vec<ParameterEstimate>,
    /// `σ²`, or every entry of `Σ` in column-major order.
    pub variance: Vec<ParameterEstimate>,
    pub mse: f64,
    pub mse_per_coefficient: f64,
    pub variance_mse: f64,
    pub seconds_per_iteration: f64,
    pub all_draws_feasible: bool,
    pub all_sigma_spd: bool,
    /// One row per replication: coefficient estimates then variance estimates.
    pub replicates: Vec<Vec<f64>>,
}

impl MethodReport {
    pub fn parameter_names(&self) -> Vec<String> {
        self.coefficients
            .iter()
            .chain(&self.variance)
            .map(|p| p.name.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentReport {
    pub study: String,
    pub config: SimulationConfig,
    pub methods: Vec<MethodReport>,
    /// BKS seconds per iteration over baseline seconds per iteration.
    pub timing_ratio: Option<f64>,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Output of one method in one replication.
#[derive(Debug, Clone)]
struct Outcome {
    coefficients: Vec<f64>,
    variance: Vec<f64>,
    seconds_per_iteration: f64,
    feasible: bool,
    spd: bool,
}

fn column_mean_sd(rows: &[Vec<f64>], j: usize) -> (f64, f64) {
    let m = rows.len() as f64;
    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m;
    if rows.len() < 2 {
        return (mean, 0.0);
    }
    let ss = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>();
    (mean, (ss / (m - 1.0)).sqrt())
}

fn aggregate(
    method: Method,
    outcomes: &[Outcome],
    coef_names: &[String],
    coef_truth: &[f64],
    var_names: &[String],
    var_truth: &[f64],
) -> Result<MethodReport, ExperimentError> {
    let coef_rows: Vec<Vec<f64>> = outcomes.iter().map(|o| o.coefficients.clone()).collect();
    let var_rows: Vec<Vec<f64>> = outcomes.iter().map(|o| o.variance.clone()).collect();
    let estimates = |rows: &[Vec<f64>], names: &[String], truth: &[f64]| {
        names
            .iter()
            .zip(truth)
            .enumerate()
            .map(|(j, (name, &t))| {
                let (mean, se) = column_mean_sd(rows, j);
                ParameterEstimate { name: name.clone(), truth: t, mean, se }
            })
            .collect::<Vec<_>>()
    };
    let coef_mse = mse(&coef_rows, coef_truth)?;
    Ok(MethodReport {
        method,
        coefficients: estimates(&coef_rows, coef_names, coef_truth),
        variance: estimates(&var_rows, var_names, var_truth),
        mse: coef_mse,
        mse_per_coefficient: coef_mse / coef_truth.len() as f64,
        variance_mse: mse(&var_rows, var_truth)?,
        seconds_per_iteration: outcomes.iter().map(|o| o.seconds_per_iteration).sum::<f64>()
            / outcomes.len() as f64,
        all_draws_feasible: outcomes.iter().all(|o| o.feasible),
        all_sigma_spd: outcomes.iter().all(|o| o.spd),
        replicates: coef_rows
            .into_iter()
            .zip(var_rows)
            .map(|(mut c, v)| {
                c.extend(v);
                c
            })
            .collect(),
    })
}

/// Runs `work(k)` for every replication, in parallel, preserving order.
fn replicate<T, F>(config: &SimulationConfig, work: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(u64) -> Result<T, ExperimentError> + Sync,
{
    let run = || {
        (0..config.replications as u64)
            .into_par_iter()
            .map(&work)
            .collect::<Result<Vec<T>, ExperimentError>>()
    };
    match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Intercept plus `p − 1` standard normal covariates.
fn simulate_design(n: usize, p: usize, rng: &mut RngStream) -> Matrix {
    let z = standard_normal_vector(n * (p - 1), rng);
    Matrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { z[(j - 1) * n + i] })
}

fn design_for(config: &SimulationConfig, p: usize, rng: &mut RngStream) -> Matrix {
    match config.design {
        DesignMode::Fresh => simulate_design(config.n, p, rng),
        DesignMode::Fixed => {
            let mut shared = rng_stream(config.seed ^ FIXED_DESIGN_SALT);
            simulate_design(config.n, p, &mut shared)
        }
    }
}

fn simulate_univariate(config: &SimulationConfig, rng: &mut RngStream) -> Result<RegressionData, ExperimentError> {
    let truth = Vector::from_row_slice(&EXAMPLE1_TRUTH);
    let x = design_for(config, truth.len(), rng);
    let eps = standard_normal_vector(config.n, rng) * EXAMPLE1_SIGMA2.sqrt();
    let y = &x * truth + eps;
    Ok(RegressionData::new(x, y)?)
}

fn simulate_multivariate(config: &SimulationConfig, rng: &mut RngStream) -> Result<MvData, ExperimentError> {
    let b = example2_truth();
    let (p, k) = b.shape();
    let x = design_for(config, p, rng);
    let sigma = example2_sigma();
    let chol = cholesky(&sigma).map_err(EngineError::from)?;
    let z = standard_normal_vector(config.n * k, rng);
    let z = Matrix::from_column_slice(config.n, k, z.as_slice());
    let y = &x * b + z * chol.lower().transpose();
    Ok(MvData::new(x, y)?)
}

pub fn example2_truth() -> Matrix {
    Matrix::from_fn(5, 2, |i, j| EXAMPLE2_TRUTH[i][j])
}

pub fn example2_sigma() -> Matrix {
    Matrix::from_fn(2, 2, |i, j| EXAMPLE2_SIGMA[i][j])
}

fn rows_to_matrix(rows: &[&[f64]]) -> Matrix {
    Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// The first simulation restriction with its third upper bound shifted by `delta`.
pub fn example1_restriction1(delta: f64) -> Result<(RestrictionSystem, Partition), ExperimentError> {
    let h = rows_to_matrix(&[
        &[0.0, 1.0, 1.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 1.0, -1.0],
        &[0.0, 0.0, 1.0, 0.0, 1.0],
    ]);
    let g = Matrix::from_column_slice(3, 1, &[-0.5, 0.2, 2.2 + delta]);
    let sys = RestrictionSystem::upper_only(h, g).map_err(EngineError::from)?;
    let part = Partition::new(sys.h(), &[2, 3, 4]).map_err(EngineError::from)?;
    Ok((sys, part))
}

pub fn example1_restriction2() -> Result<(RestrictionSystem, Partition), ExperimentError> {
    let h = rows_to_matrix(&[
        &[0.0, 1.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, -1.0, 0.0],
    ]);
    let g = Matrix::from_column_slice(3, 1, &[-0.5, -1.5, -2.0]);
    let sys = RestrictionSystem::upper_only(h, g).map_err(EngineError::from)?;
    let part = Partition::new(sys.h(), &[1, 2, 3]).map_err(EngineError::from)?;
    Ok((sys, part))
}

/// Square augmentation of the second restriction used by the baseline.
pub fn example1_baseline_system() -> Result<RestrictionSystem, ExperimentError> {
    let h = rows_to_matrix(&[
        &[1.0, 0.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, -1.0, 0.0],
        &[0.0, 0.0, 0.0, 0.0, 1.0],
    ]);
    let inf = f64::INFINITY;
    let g = Matrix::from_column_slice(5, 1, &[inf, -0.5, -1.5, -2.0, inf]);
    Ok(RestrictionSystem::upper_only(h, g).map_err(EngineError::from)?)
}

pub fn example2_restriction() -> Result<RestrictionSystem, ExperimentError> {
    let r = rows_to_matrix(&[
        &[0.0, 1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 1.0, 0.0],
        &[0.0, 0.0, 1.0, -1.0, 1.0],
    ]);
    let g = rows_to_matrix(&[&[0.0, 0.0], &[0.5, 0.0], &[0.5, 1.0]]);
    Ok(RestrictionSystem::upper_only(r, g).map_err(EngineError::from)?)
}

fn chain_feasible(chain: &Chain, sys: &RestrictionSystem) -> bool {
    chain
        .kept()
        .iter()
        .all(|d| sys.check_feasible_vector(&Vector::from_row_slice(&d.beta)))
}

fn chain_mv_checks(chain: &ChainMV, sys: &RestrictionSystem) -> (bool, bool) {
    let mut feasible = true;
    let mut spd = true;
    for d in chain.kept() {
        feasible &= sys.check_feasible(&chain.beta_of(d));
        let s = chain.sigma_of(d);
        spd &= s == s.transpose() && cholesky(&s).is_ok();
    }
    (feasible, spd)
}

fn univariate_outcome(chain: &Chain, sys: &RestrictionSystem) -> Outcome {
    Outcome {
        coefficients: chain.beta_mean().iter().copied().collect(),
        variance: vec![chain.sigma2_mean()],
        seconds_per_iteration: chain.timing.seconds_per_iteration,
        feasible: chain_feasible(chain, sys),
        spd: chain.kept().iter().all(|d| d.sigma2 > 0.0),
    }
}

fn beta_names(p: usize) -> Vec<String> {
    univariate_names(p)[1..].to_vec()
}

/// Simulation study with `n = 20` and five coefficients under restriction 1 or 2.
/// Restriction 2 also runs the square-H baseline on the same data.
pub fn run_example1(restriction: Restriction, config: &SimulationConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let (sys, part) = match restriction {
        Restriction::First => example1_restriction1(0.0)?,
        Restriction::Second => example1_restriction2()?,
    };
    let baseline = match restriction {
        Restriction::Second => Some(example1_baseline_system()?),
        Restriction::First => None,
    };
    let results = replicate(config, |k| {
        let mut rng = substream(config.seed, k);
        let data = simulate_univariate(config, &mut rng)?;
        let prior = PriorSpec::from_ols(&data, &part, 3.0, 1.0)?;
        let bks_seed = rng.next_u64();
        let chain = run_chain(&data, &sys, Some(&part), &prior, &config.chain_config(bks_seed))?;
        let bks = univariate_outcome(&chain, &sys);
        let base = match &baseline {
            Some(base_sys) => {
                let full = FullPrior::from_partitioned(&prior, &part)?;
                let seed = rng.next_u64();
                let chain = geweke_baseline_chain(&data, base_sys, &full, &config.chain_config(seed))?;
                Some(univariate_outcome(&chain, base_sys))
            }
            None => None,
        };
        Ok((bks, base))
    })?;

    let names = beta_names(EXAMPLE1_TRUTH.len());
    let var_names = vec!["sigma2".to_string()];
    let (bks, base): (Vec<Outcome>, Vec<Option<Outcome>>) = results.into_iter().unzip();
    let mut methods = vec![aggregate(Method::Bks, &bks, &names, &EXAMPLE1_TRUTH, &var_names, &[EXAMPLE1_SIGMA2])?];
    let base: Vec<Outcome> = base.into_iter().flatten().collect();
    let mut timing_ratio = None;
    if !base.is_empty() {
        let report = aggregate(Method::GewekeBaseline, &base, &names, &EXAMPLE1_TRUTH, &var_names, &[EXAMPLE1_SIGMA2])?;
        timing_ratio = Some(methods[0].seconds_per_iteration / report.seconds_per_iteration);
        methods.push(report);
    }
    let study = match restriction {
        Restriction::First => "example1-r1",
        Restriction::Second => "example1-r2",
    };
    Ok(ExperimentReport {
        study: study.into(),
        config: config.clone(),
        methods,
        timing_ratio,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DeltaPoint {
    pub delta: f64,
    pub mse_restricted: f64,
    pub mse_unrestricted: f64,
    pub re: f64,
    /// Share of replications where the restricted estimate has the smaller error.
    pub restricted_win_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DeltaSweepReport {
    pub config: SimulationConfig,
    pub points: Vec<DeltaPoint>,
}

impl DeltaSweepReport {
    /// The grid value with the largest relative efficiency.
    pub fn argmax_delta(&self) -> Option<f64> {
        self.points
            .iter()
            .max_by(|a, b| a.re.total_cmp(&b.re))
            .map(|p| p.delta)
    }

    pub fn re_at(&self, delta: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.delta - delta).abs() < 1e-9)
            .map(|p| p.re)
    }
}

fn squared_error(estimate: &[f64], truth: &[f64]) -> f64 {
    estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum()
}

/// Relative efficiency of the restricted estimator under the first
/// restriction with its third bound moved to `2.2 + δ`, against the
/// unrestricted posterior mean with prior `N(β̂, σ²(XᵀX)⁻¹)`. Each
/// replication's data and chain seed are shared across the whole grid.
pub fn run_delta_sweep(deltas: &[f64], config: &SimulationConfig) -> Result<DeltaSweepReport, ExperimentError> {
    config.validate()?;
    if deltas.is_empty() || deltas.iter().any(|d| !(-1.0..=1.0).contains(d)) {
        return Err(ExperimentError::InvalidConfig("deltas must be non-empty and lie in [-1, 1]".into()));
    }
    let systems = deltas
        .iter()
        .map(|&d| example1_restriction1(d))
        .collect::<Result<Vec<_>, _>>()?;
    // Per replication: unrestricted squared error, then one restricted error per delta.
    let results = replicate(config, |k| {
        let mut rng = substream(config.seed, k);
        let data = simulate_univariate(config, &mut rng)?;
        let beta_hat = data.ols()?;
        let xtx_inv = cholesky(&data.x.tr_mul(&data.x)).map_err(EngineError::from)?.inverse();
        let un = unrestricted_posterior_mean(&data, &beta_hat, &xtx_inv)?;
        let un_err = squared_error(un.as_slice(), &EXAMPLE1_TRUTH);
        let seed = rng.next_u64();
        let mut restricted = Vec::with_capacity(systems.len());
        for (sys, part) in &systems {
            let prior = PriorSpec::from_ols(&data, part, 3.0, 1.0)?;
            let chain = run_chain(&data, sys, Some(part), &prior, &config.chain_config(seed))?;
            restricted.push(squared_error(chain.beta_mean().as_slice(), &EXAMPLE1_TRUTH));
        }
        Ok((un_err, restricted))
    })?;
    let m = results.len() as f64;
    let mse_un = results.iter().map(|r| r.0).sum::<f64>() / m;
    let points = deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let mse_re = results.iter().map(|r| r.1[i]).sum::<f64>() / m;
            let wins = results.iter().filter(|r| r.1[i] < r.0).count() as f64;
            Ok(DeltaPoint {
                delta,
                mse_restricted: mse_re,
                mse_unrestricted: mse_un,
                re: relative_efficiency(mse_un, mse_re)?,
                restricted_win_fraction: wins / m,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(DeltaSweepReport {
        config: config.clone(),
        points,
    })
}

/// Two-response simulation with `n = 20`, prior `IW(2, RSS/20)` and an
/// automatically selected partition.
pub fn run_example2(config: &SimulationConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let sys = example2_restriction()?;
    let part = crate::restrictions::select_partition(&sys, None).map_err(EngineError::from)?;
    let truth = example2_truth();
    let sigma = example2_sigma();
    let (p, k) = truth.shape();
    let outcomes = replicate(config, |rep| {
        let mut rng = substream(config.seed, rep);
        let data = simulate_multivariate(config, &mut rng)?;
        let prior = PriorSpecMV::from_ols(&data, &part, 2.0, config.n as f64)?;
        let seed = rng.next_u64();
        let chain = run_chain_mv(&data, &sys, Some(&part), &prior, &config.chain_config(seed))?;
        let (feasible, spd) = chain_mv_checks(&chain, &sys);
        Ok(Outcome {
            coefficients: chain.beta_mean().as_slice().to_vec(),
            variance: chain.sigma_mean().as_slice().to_vec(),
            seconds_per_iteration: chain.timing.seconds_per_iteration,
            feasible,
            spd,
        })
    })?;
    let names = multivariate_names(p, k);
    let (sigma_names, beta_names) = names.split_at(k * k);
    let report = aggregate(
        Method::Bks,
        &outcomes,
        beta_names,
        truth.as_slice(),
        sigma_names,
        sigma.as_slice(),
    )?;
    Ok(ExperimentReport {
        study: "example2".into(),
        config: config.clone(),
        methods: vec![report],
        timing_ratio: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisMethod {
    pub method: Method,
    pub parameters: Vec<ParameterSummary>,
    pub seconds_per_iteration: f64,
    pub all_draws_feasible: bool,
    pub all_sigma_spd: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisReport {
    pub study: String,
    pub config: SamplerConfig,
    pub methods: Vec<AnalysisMethod>,
}

impl AnalysisReport {
    pub fn method(&self, m: Method) -> Option<&AnalysisMethod> {
        self.methods.iter().find(|r| r.method == m)
    }
}

impl AnalysisMethod {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct RentAnalysis {
    pub report: AnalysisReport,
    pub bks: Chain,
    pub baseline: Chain,
}

/// Sign restrictions `β₂ ≥ 0, β₃ ≥ 0, β₄ ≤ 0, β₅ ≤ 0` written as `Hβ ≤ 0`.
pub fn rent_restriction() -> Result<(RestrictionSystem, Partition), ExperimentError> {
    let h = rows_to_matrix(&[
        &[0.0, -1.0, 0.0, 0.0, 0.0],
        &[0.0, 0.0, -1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, 1.0, 0.0],
        &[0.0, 0.0, 0.0, 0.0, 1.0],
    ]);
    let sys = RestrictionSystem::upper_only(h, Matrix::zeros(4, 1)).map_err(EngineError::from)?;
    let part = Partition::new(sys.h(), &[1, 2, 3, 4]).map_err(EngineError::from)?;
    Ok((sys, part))
}

pub fn rent_baseline_system() -> Result<RestrictionSystem, ExperimentError> {
    let h = Matrix::from_diagonal(&Vector::from_row_slice(&[1.0, -1.0, -1.0, 1.0, 1.0]));
    let g = Matrix::from_column_slice(5, 1, &[f64::INFINITY, 0.0, 0.0, 0.0, 0.0]);
    Ok(RestrictionSystem::upper_only(h, g).map_err(EngineError::from)?)
}

/// Rent regression with both samplers, `a = b = 0.001` and prior means at
/// the published maximum-likelihood estimate.
pub fn run_rent_analysis(dataset: &Dataset, config: &SamplerConfig) -> Result<RentAnalysis, ExperimentError> {
    if dataset.x.ncols() != 5 {
        return Err(ExperimentError::ShapeMismatch(format!(
            "rent design needs 5 columns, found {}",
            dataset.x.ncols()
        )));
    }
    let data = RegressionData::new(dataset.x.clone(), dataset.y_vector())?;
    let (sys, part) = rent_restriction()?;
    let mu = Vector::from_row_slice(&RENT_PRIOR_MEAN);
    let prior = PriorSpec::from_ols(&data, &part, 0.001, 0.001)?.with_mean(&part, &mu);
    let bks = run_chain(&data, &sys, Some(&part), &prior, config)?;

    let base_sys = rent_baseline_system()?;
    let full = FullPrior {
        a: 0.001,
        b: 0.001,
        mu,
        c: cholesky(&data.x.tr_mul(&data.x)).map_err(EngineError::from)?.inverse(),
    };
    let base_cfg = SamplerConfig {
        seed: config.seed.wrapping_add(1),
        ..config.clone()
    };
    let baseline = geweke_baseline_chain(&data, &base_sys, &full, &base_cfg)?;

    let describe = |method, chain: &Chain, sys: &RestrictionSystem| -> Result<AnalysisMethod, ExperimentError> {
        Ok(AnalysisMethod {
            method,
            parameters: summarize(&DrawTable::from(chain))?,
            seconds_per_iteration: chain.timing.seconds_per_iteration,
            all_draws_feasible: chain_feasible(chain, sys),
            all_sigma_spd: chain.kept().iter().all(|d| d.sigma2 > 0.0),
        })
    };
    let report = AnalysisReport {
        study: "rent".into(),
        config: config.clone(),
        methods: vec![
            describe(Method::Bks, &bks, &sys)?,
            describe(Method::GewekeBaseline, &baseline, &sys)?,
        ],
    };
    Ok(RentAnalysis { report, bks, baseline })
}

#[derive(Debug, Clone)]
pub struct ChemicalAnalysis {
    pub report: AnalysisReport,
    pub chain: ChainMV,
}

pub fn chemical_restriction() -> Result<(RestrictionSystem, Partition), ExperimentError> {
    let r = rows_to_matrix(&[&[0.0, 1.0, 1.0, -1.0], &[0.0, 0.0, 0.0, 1.0]]);
    let g = rows_to_matrix(&[&[-1.0, 0.6, 1.0], &[-2.0, 1.5, 1.5]]);
    let sys = RestrictionSystem::upper_only(r, g).map_err(EngineError::from)?;
    let part = Partition::new(sys.h(), &[2, 3]).map_err(EngineError::from)?;
    Ok((sys, part))
}

/// Three-response chemical reaction regression with prior `IW(3, RSS/19)`.
pub fn run_chemical_analysis(dataset: &Dataset, config: &SamplerConfig) -> Result<ChemicalAnalysis, ExperimentError> {
    if dataset.x.ncols() != 4 || dataset.y.ncols() != 3 {
        return Err(ExperimentError::ShapeMismatch(format!(
            "chemical data needs 4 covariates and 3 responses, found {} and {}",
            dataset.x.ncols(),
            dataset.y.ncols()
        )));
    }
    let data = MvData::new(dataset.x.clone(), dataset.y.clone())?;
    let (sys, part) = chemical_restriction()?;
    let prior = PriorSpecMV::from_ols(&data, &part, 3.0, data.n() as f64)?;
    let chain = run_chain_mv(&data, &sys, Some(&part), &prior, config)?;
    let (feasible, spd) = chain_mv_checks(&chain, &sys);
    let report = AnalysisReport {
        study: "chemical".into(),
        config: config.clone(),
        methods: vec![AnalysisMethod {
            method: Method::Bks,
            parameters: summarize(&DrawTable::from(&chain))?,
            seconds_per_iteration: chain.timing.seconds_per_iteration,
            all_draws_feasible: feasible,
            all_sigma_spd: spd,
        }],
    };
    Ok(ChemicalAnalysis { report, chain })
}
