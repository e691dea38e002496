//! One-sample Kolmogorov-Smirnov test and basic sample summaries.

use serde::{Deserialize, Serialize};

use crate::exec::compensated_sum;

/// `sup_x |F_n(x) - F(x)|` for samples sorted ascending.
pub fn ks_statistic_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (k, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    d
}

pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    ks_statistic_sorted(&sorted, cdf)
}

/// `P(sup |B| > lambda)` for a Brownian bridge `B`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        total += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// Asymptotic p-value of a KS distance `d` from `n` samples, with the
/// Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let statistic = ks_statistic(samples, cdf);
    KsResult { statistic, p_value: ks_p_value(statistic, samples.len()), n: samples.len() }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Mean, unbiased variance, skewness and excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

pub fn moments(values: &[f64]) -> Moments {
    let n = values.len();
    let m = mean(values);
    let central = |p: i32| compensated_sum(values.iter().map(|x| (x - m).powi(p))) / n as f64;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let variance = if n > 1 { m2 * n as f64 / (n - 1) as f64 } else { 0.0 };
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Moments { n, mean: m, variance, skewness, excess_kurtosis }
}

pub fn estimate(values: &[f64]) -> Estimate {
    let m = moments(values);
    Estimate { mean: m.mean, std_error: (m.variance / m.n as f64).sqrt() }
}

/// Unbiased sample covariance.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    compensated_sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb))) / (n - 1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn kolmogorov_tail_values() {
        // Classical critical values: 1.3581 at 5%, 1.6276 at 1%.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_statistic_small_cases() {
        assert_eq!(ks_statistic(&[0.5], |x| x), 0.5);
        let d = ks_statistic(&[0.25, 0.75], |x| x);
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uniform_samples_pass_and_shifted_fail() {
        let mut rng = stream_rng(3, 1);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_test(&v, |x| x.clamp(0.0, 1.0)).p_value > 0.01);
        let shifted: Vec<f64> = v.iter().map(|x| x * 0.95).collect();
        assert!(ks_test(&shifted, |x| x.clamp(0.0, 1.0)).p_value < 0.01);
        let normal = Normal::new(0.0, 1.0).unwrap();
        assert!(ks_test(&v, |x| normal.cdf(x)).p_value < 1e-10);
    }

    #[test]
    fn moment_examples() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(m.skewness.abs() < 1e-15);
        assert!((m.excess_kurtosis - (-1.36)).abs() < 1e-12);
        let e = estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert!((e.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((covariance(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-15);
    }
}
