use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use super::SamplingError;

// Beyond this many SDs the inverse CDF loses precision; switch to rejection.
const TAIL_CUTOFF: f64 = 5.0;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `1 - Φ(x)` without cancellation.
pub fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

fn upper_tail_inverse(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// Draw from N(mu, sigma²) restricted to the open interval (lower, upper).
pub fn sample_truncnorm<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64, SamplingError> {
    if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SamplingError::InvalidParameter(format!(
            "truncated normal needs finite mean and positive sd (got {mu}, {sigma})"
        )));
    }
    if !(lower < upper) || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
        return Err(SamplingError::EmptyInterval { lower, upper });
    }
    let a = (lower - mu) / sigma;
    let b = (upper - mu) / sigma;
    let z = standard_truncated(a, b, rng);
    let mut x = mu + sigma * z;
    if x <= lower {
        x = lower.next_up();
    }
    if x >= upper {
        x = upper.next_down();
    }
    if !(lower < x && x < upper) {
        // interval narrower than two ulps around a representable point
        x = 0.5 * (lower + upper);
    }
    Ok(x)
}

fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return rng.sample(StandardNormal);
    }
    if a >= TAIL_CUTOFF {
        return tail_rejection(a, b, rng);
    }
    if b <= -TAIL_CUTOFF {
        return -tail_rejection(-b, -a, rng);
    }
    if a >= 0.0 {
        return positive_side(a, b, rng);
    }
    if b <= 0.0 {
        return -positive_side(-b, -a, rng);
    }
    // straddles zero: pick a side by mass, then invert within it
    let right = 0.5 - upper_tail(b);
    let left = 0.5 - upper_tail(-a);
    if open01(rng) * (left + right) < right {
        positive_side(0.0, b, rng)
    } else {
        -positive_side(0.0, -a, rng)
    }
}

// Inverse CDF on [a, b] with 0 <= a, using upper-tail probabilities.
fn positive_side<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let qa = upper_tail(a);
    let qb = upper_tail(b);
    let q = qb + open01(rng) * (qa - qb);
    upper_tail_inverse(q).clamp(a, b)
}

// Rejection sampler for [a, b] with a in the far right tail.
fn tail_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let root = (a * a + 4.0).sqrt();
    let width_threshold = 2.0 / (a + root) * ((a * a - a * root) / 4.0 + 0.5).exp();
    if b - a <= width_threshold {
        loop {
            let x = a + (b - a) * open01(rng);
            if open01(rng).ln() <= (a * a - x * x) / 2.0 {
                return x;
            }
        }
    }
    let lambda = (a + root) / 2.0;
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        if z >= b {
            continue;
        }
        if open01(rng).ln() <= -(z - lambda) * (z - lambda) / 2.0 {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::rng_stream;

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                let f = cdf(*x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    fn truncated_cdf(mu: f64, s: f64, lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
        let pa = normal_cdf((lo - mu) / s);
        let pb = normal_cdf((hi - mu) / s);
        move |x| (normal_cdf((x - mu) / s) - pa) / (pb - pa)
    }

    #[test]
    fn cdf_and_quantile_agree() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let c = normal_cdf(1.959963984540054);
        assert!((c - 0.975).abs() < 1e-12, "{c}");
        for p in [1e-10, 0.01, 0.3, 0.5, 0.9, 0.999] {
            let r = normal_cdf(normal_quantile(p));
            assert!((r - p).abs() < 1e-12 * p.max(1e-3), "{p} {r}");
        }
        assert!((upper_tail(8.0) - 6.22096057427178e-16).abs() < 1e-25);
    }

    #[test]
    fn half_normal_mean() {
        let mut rng = rng_stream(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_truncnorm(0.0, 1.0, 0.0, f64::INFINITY, &mut rng).unwrap();
            assert!(x > 0.0);
            sum += x;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.7979).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn far_tail_stays_inside() {
        let mut rng = rng_stream(12);
        for _ in 0..10_000 {
            let x = sample_truncnorm(0.0, 1.0, 8.0, 9.0, &mut rng).unwrap();
            assert!(x > 8.0 && x < 9.0);
            let y = sample_truncnorm(0.0, 1.0, f64::NEG_INFINITY, -12.0, &mut rng).unwrap();
            assert!(y < -12.0);
            let z = sample_truncnorm(0.0, 1.0, 6.0, 6.001, &mut rng).unwrap();
            assert!(z > 6.0 && z < 6.001);
        }
    }

    #[test]
    fn ks_two_sided_interval() {
        let mut rng = rng_stream(13);
        let (mu, s, lo, hi) = (0.3, 1.7, -1.0, 2.5);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_truncnorm(mu, s, lo, hi, &mut rng).unwrap())
            .collect();
        let d = ks_statistic(xs, truncated_cdf(mu, s, lo, hi));
        assert!(d < 0.002, "KS {d}");
    }

    #[test]
    fn ks_tail_interval() {
        let mut rng = rng_stream(14);
        let (lo, hi) = (5.5, f64::INFINITY);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| sample_truncnorm(0.0, 1.0, lo, hi, &mut rng).unwrap())
            .collect();
        let qa = upper_tail(lo);
        let d = ks_statistic(xs, move |x| 1.0 - upper_tail(x) / qa);
        assert!(d < 0.004, "KS {d}");
    }

    #[test]
    fn rejects_empty_and_bad_sd() {
        let mut rng = rng_stream(0);
        assert!(matches!(
            sample_truncnorm(0.0, 1.0, 1.0, 1.0, &mut rng),
            Err(SamplingError::EmptyInterval { .. })
        ));
        assert!(sample_truncnorm(0.0, 0.0, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_truncnorm(0.0, 1.0, 2.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a: Vec<f64> = {
            let mut r = rng_stream(9);
            (0..100)
                .map(|_| sample_truncnorm(1.0, 2.0, -0.5, 0.5, &mut r).unwrap())
                .collect()
        };
        let mut r = rng_stream(9);
        for x in a {
            assert_eq!(x, sample_truncnorm(1.0, 2.0, -0.5, 0.5, &mut r).unwrap());
        }
    }
}
