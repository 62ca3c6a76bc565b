//! Posterior summaries and single-chain convergence diagnostics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::multivariate::ChainMV;
use crate::univariate::Chain;

/// Minimum series length accepted by [`ess`].
pub const MIN_ESS_LENGTH: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("chain has no draws after burn-in")]
    EmptyChain,
    #[error("need at least {needed} values, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("{names} names for {columns} columns")]
    ShapeMismatch { names: usize, columns: usize },
}

/// Named columns of post-burn-in draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl DrawTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, DiagnosticsError> {
        if names.len() != columns.len() {
            return Err(DiagnosticsError::ShapeMismatch {
                names: names.len(),
                columns: columns.len(),
            });
        }
        Ok(Self { names, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }
}

pub fn univariate_names(p: usize) -> Vec<String> {
    std::iter::once("sigma2".to_string())
        .chain((1..=p).map(|j| format!("beta_{j}")))
        .collect()
}

/// `sigma_ij` for every entry, then `beta_ij` (coefficient i, response j),
/// both column-major.
pub fn multivariate_names(p: usize, k: usize) -> Vec<String> {
    let sig = (1..=k).flat_map(|j| (1..=k).map(move |i| format!("sigma_{i}{j}")));
    let beta = (1..=k).flat_map(|j| (1..=p).map(move |i| format!("beta_{i}{j}")));
    sig.chain(beta).collect()
}

impl From<&Chain> for DrawTable {
    fn from(chain: &Chain) -> Self {
        let p = chain.p();
        let kept = chain.kept();
        let mut columns = vec![Vec::with_capacity(kept.len()); p + 1];
        for d in kept {
            columns[0].push(d.sigma2);
            for (j, b) in d.beta.iter().enumerate() {
                columns[j + 1].push(*b);
            }
        }
        Self {
            names: univariate_names(p),
            columns,
        }
    }
}

impl From<&ChainMV> for DrawTable {
    fn from(chain: &ChainMV) -> Self {
        let kept = chain.kept();
        let width = chain.k * chain.k + chain.p * chain.k;
        let mut columns = vec![Vec::with_capacity(kept.len()); width];
        for d in kept {
            for (c, v) in columns.iter_mut().zip(d.sigma.iter().chain(&d.beta)) {
                c.push(*v);
            }
        }
        Self {
            names: multivariate_names(chain.p, chain.k),
            columns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub acf1: f64,
}

// Sum in ascending order with Neumaier compensation, so the result does not
// depend on the order of the input.
fn ordered_sum(sorted: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in sorted {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and sample SD (n − 1 denominator; 0 for a single value).
pub fn mean_sd(series: &[f64]) -> Result<(f64, f64), DiagnosticsError> {
    if series.is_empty() {
        return Err(DiagnosticsError::EmptyChain);
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = ordered_sum(&sorted) / n;
    if sorted.len() == 1 {
        return Ok((mean, 0.0));
    }
    let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean) * (v - mean)).collect();
    sq.sort_by(f64::total_cmp);
    Ok((mean, (ordered_sum(&sq) / (n - 1.0)).sqrt()))
}

// Autocorrelations at lags 0..=max_lag, no length precondition.
fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let mut out = vec![0.0; max_lag + 1];
    out[0] = 1.0;
    if n == 0 {
        return out;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let r0: f64 = dev.iter().map(|d| d * d).sum();
    if !(r0 > 0.0) {
        return out;
    }
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = dev
        .iter()
        .map(|&d| Complex::new(d, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = buf[0].re;
    for (lag, slot) in out.iter_mut().enumerate().skip(1) {
        if lag < n {
            *slot = buf[lag].re / scale;
        }
    }
    out
}

/// Sample autocorrelation `ρ̂_0..ρ̂_max_lag`, normalised by the lag-0 sum.
/// A constant series gives 1 at lag 0 and 0 elsewhere.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>, DiagnosticsError> {
    if max_lag >= series.len() {
        return Err(DiagnosticsError::InsufficientData {
            needed: max_lag + 1,
            found: series.len(),
        });
    }
    Ok(autocorrelation(series, max_lag))
}

fn ess_estimate(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return n as f64;
    }
    let rho = autocorrelation(series, n - 1);
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = rho[2 * m] + rho[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    if !(tau > 0.0) {
        return n as f64;
    }
    (n as f64 / tau).min(n as f64)
}

/// Effective sample size `N / (1 + 2 Σ ρ̂_k)`, truncated at the first
/// non-positive sum of adjacent lag pairs and capped at `N`.
pub fn ess(series: &[f64]) -> Result<f64, DiagnosticsError> {
    if series.len() < MIN_ESS_LENGTH {
        return Err(DiagnosticsError::InsufficientData {
            needed: MIN_ESS_LENGTH,
            found: series.len(),
        });
    }
    Ok(ess_estimate(series))
}

/// Monte Carlo standard error of the mean.
pub fn mc_standard_error(series: &[f64]) -> Result<f64, DiagnosticsError> {
    let (_, sd) = mean_sd(series)?;
    Ok(sd / ess_estimate(series).sqrt())
}

pub fn summarize(table: &DrawTable) -> Result<Vec<ParameterSummary>, DiagnosticsError> {
    if table.rows() == 0 {
        return Err(DiagnosticsError::EmptyChain);
    }
    table
        .names
        .iter()
        .zip(&table.columns)
        .map(|(name, col)| {
            let (mean, sd) = mean_sd(col)?;
            Ok(ParameterSummary {
                name: name.clone(),
                mean,
                sd,
                ess: ess_estimate(col),
                acf1: if col.len() > 1 {
                    autocorrelation(col, 1)[1]
                } else {
                    0.0
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMeanCheck {
    pub first_mean: f64,
    pub second_mean: f64,
    pub z: f64,
    pub passed: bool,
}

/// Compares the means of the two halves of a series against their joint
/// Monte Carlo standard error; passes when they differ by at most 3 SEs.
pub fn split_mean_check(series: &[f64]) -> Result<SplitMeanCheck, DiagnosticsError> {
    if series.len() < 2 * MIN_ESS_LENGTH {
        return Err(DiagnosticsError::InsufficientData {
            needed: 2 * MIN_ESS_LENGTH,
            found: series.len(),
        });
    }
    let (a, b) = series.split_at(series.len() / 2);
    let (ma, _) = mean_sd(a)?;
    let (mb, _) = mean_sd(b)?;
    let se = (mc_standard_error(a)?.powi(2) + mc_standard_error(b)?.powi(2)).sqrt();
    let diff = (ma - mb).abs();
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SplitMeanCheck {
        first_mean: ma,
        second_mean: mb,
        z,
        passed: z <= 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::rng_stream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn white_noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_stream(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng_stream(seed);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn constant_series() {
        let s = vec![2.5; 500];
        let (m, sd) = mean_sd(&s).unwrap();
        assert_eq!((m, sd), (2.5, 0.0));
        let r = acf(&s, 5).unwrap();
        assert_eq!(r, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ess(&s).unwrap(), 500.0);
    }

    #[test]
    fn iid_mean_sd() {
        let s = white_noise(1_000_000, 1);
        let (m, sd) = mean_sd(&s).unwrap();
        assert!(m.abs() < 0.004);
        assert!((sd - 1.0).abs() < 0.003);
    }

    #[test]
    fn white_noise_acf_band() {
        let n = 100_000;
        let s = white_noise(n, 2);
        let r = acf(&s, 20).unwrap();
        assert_eq!(r[0], 1.0);
        let band = 3.0 / (n as f64).sqrt();
        for v in &r[1..] {
            assert!(v.abs() < band, "{v}");
        }
        let e = ess(&s).unwrap() / n as f64;
        assert!((0.9..=1.1).contains(&e), "{e}");
    }

    #[test]
    fn ar1_acf_and_ess() {
        let n = 100_000;
        let s = ar1(n, 0.9, 3);
        let r = acf(&s, 1).unwrap();
        assert!((r[1] - 0.9).abs() < 0.02);
        let e = ess(&s).unwrap() / n as f64;
        assert!((e - 0.1 / 1.9).abs() < 0.01, "{e}");
    }

    #[test]
    fn acf_matches_direct_sum() {
        let s = white_noise(300, 4);
        let m = s.iter().sum::<f64>() / 300.0;
        let d: Vec<f64> = s.iter().map(|v| v - m).collect();
        let r0: f64 = d.iter().map(|v| v * v).sum();
        let r = acf(&s, 10).unwrap();
        for k in 1..=10 {
            let rk: f64 = (0..300 - k).map(|t| d[t] * d[t + k]).sum();
            assert!((r[k] - rk / r0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_short_input() {
        assert!(matches!(
            acf(&[1.0, 2.0], 2),
            Err(DiagnosticsError::InsufficientData { .. })
        ));
        assert!(ess(&[1.0; 50]).is_err());
        assert_eq!(mean_sd(&[]), Err(DiagnosticsError::EmptyChain));
    }

    #[test]
    fn split_mean_flags_drift() {
        let ok = split_mean_check(&white_noise(10_000, 5)).unwrap();
        assert!(ok.passed);
        let drift: Vec<f64> = (0..10_000).map(|i| i as f64 / 1000.0).collect();
        assert!(!split_mean_check(&drift).unwrap().passed);
    }

    #[test]
    fn names_layout() {
        assert_eq!(univariate_names(2), vec!["sigma2", "beta_1", "beta_2"]);
        assert_eq!(
            multivariate_names(2, 2),
            vec![
                "sigma_11", "sigma_21", "sigma_12", "sigma_22", "beta_11", "beta_21", "beta_12",
                "beta_22"
            ]
        );
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant(
            mut xs in proptest::collection::vec(-1e6f64..1e6, 1..200),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let before = mean_sd(&xs).unwrap();
            xs.shuffle(&mut rng_stream(seed));
            let after = mean_sd(&xs).unwrap();
            prop_assert_eq!(before.0.to_bits(), after.0.to_bits());
            prop_assert_eq!(before.1.to_bits(), after.1.to_bits());
        }
    }
}
