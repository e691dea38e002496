//! Stationary process generators and diagnostics for the decay of
//! `P(X_1 <= t, ..., X_i <= t)`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diagram::{TiePolicy, TimeSeries};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ks::Estimate;
use crate::null::Marginal;
use crate::rng::{stream_rng, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProcessKind {
    Iid {
        marginal: Marginal,
    },
    /// `X_k = sum_{l=0}^m w_l Z_{k+l}` with i.i.d. standard normal `Z` and
    /// weights rescaled to unit Euclidean norm. Empty weights mean equal
    /// weights.
    MdepGaussianMa {
        m: usize,
        #[serde(default)]
        weights: Vec<f64>,
    },
    /// A built-in Markov kernel started from its stationary law.
    MinorizedMarkov {
        kernel: KernelSpec,
        /// Required lower bound on `eta_t` over `t_grid`.
        #[serde(default)]
        eta_floor: f64,
        #[serde(default)]
        t_grid: Vec<f64>,
    },
    /// `X_{k+1} = phi X_k + e_k`, `X_1 ~ N(0, 1 / (1 - phi^2))`.
    GaussianAr1 {
        phi: f64,
    },
}

/// A Markov kernel named by `name` with numeric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Kernels with a closed-form stationary law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// With probability `refresh` draw a fresh `U(0, 1)`, otherwise move to
    /// `frac(x + shift)`. Stationary law `U(0, 1)`; `eta_t = refresh (1 - t)`.
    RefreshRotation { refresh: f64, shift: f64 },
    /// `N(phi x, 1 - phi^2)` with `phi` in `(-1, 0]`. Stationary law
    /// `N(0, 1)`; `eta_t = 1 - Phi(t (1 - phi) / sqrt(1 - phi^2))`.
    StandardizedAr1 { phi: f64 },
}

impl KernelSpec {
    pub fn resolve(&self) -> Result<Kernel> {
        let param = |key: &str| {
            self.params.get(key).copied().ok_or_else(|| {
                Error::InvalidProcess(format!("kernel {} needs parameter {key:?}", self.name))
            })
        };
        match self.name.as_str() {
            "refresh_rotation" => {
                let refresh = param("refresh")?;
                let shift = self.params.get("shift").copied().unwrap_or(0.618_033_988_749_894_8);
                if !(refresh > 0.0 && refresh <= 1.0) || !shift.is_finite() {
                    return Err(Error::InvalidProcess(format!(
                        "refresh_rotation needs refresh in (0, 1], got {refresh}"
                    )));
                }
                Ok(Kernel::RefreshRotation { refresh, shift })
            }
            "standardized_ar1" => {
                let phi = param("phi")?;
                if !(phi > -1.0 && phi <= 0.0) {
                    return Err(Error::InvalidProcess(format!(
                        "standardized_ar1 is minorized only for phi in (-1, 0], got {phi}"
                    )));
                }
                Ok(Kernel::StandardizedAr1 { phi })
            }
            other => Err(Error::UnknownKernelStationaryLaw(other.to_string())),
        }
    }
}

impl Kernel {
    /// `eta_t` with `sup_{x <= t} P(x, (-inf, t]) <= 1 - eta_t`.
    pub fn eta(&self, t: f64) -> f64 {
        match *self {
            Kernel::RefreshRotation { refresh, .. } => refresh * (1.0 - t.clamp(0.0, 1.0)),
            Kernel::StandardizedAr1 { phi } => {
                let sd = (1.0 - phi * phi).sqrt();
                std_normal().sf(t * (1.0 - phi) / sd)
            }
        }
    }

    fn stationary(&self) -> Marginal {
        match self {
            Kernel::RefreshRotation { .. } => Marginal::Uniform01,
            Kernel::StandardizedAr1 { .. } => Marginal::StdNormal,
        }
    }

    fn start(&self, rng: &mut StreamRng) -> f64 {
        match self {
            Kernel::RefreshRotation { .. } => rng.random(),
            Kernel::StandardizedAr1 { .. } => rng.sample(StandardNormal),
        }
    }

    fn step(&self, x: f64, rng: &mut StreamRng) -> f64 {
        match *self {
            Kernel::RefreshRotation { refresh, shift } => {
                if rng.random::<f64>() < refresh {
                    rng.random()
                } else {
                    (x + shift).rem_euclid(1.0)
                }
            }
            Kernel::StandardizedAr1 { phi } => {
                let e: f64 = rng.sample(StandardNormal);
                phi * x + (1.0 - phi * phi).sqrt() * e
            }
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Analytically known dependence class of a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum MixingClass {
    Independent,
    /// `rho(k) = 0` for `k > m`.
    MDependent { m: usize },
    /// `rho(k) <= C r^k`.
    GeometricRho { rate: f64 },
}

impl ProcessSpec {
    pub fn iid(marginal: Marginal, seed: u64) -> Self {
        Self { kind: ProcessKind::Iid { marginal }, seed }
    }

    pub fn mdep(m: usize, seed: u64) -> Self {
        Self { kind: ProcessKind::MdepGaussianMa { m, weights: Vec::new() }, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ProcessKind::Iid { marginal } => {
                marginal.validate().map_err(|e| Error::InvalidProcess(e.to_string()))?;
                marginal.quantile(0.5).map(|_| ())
            }
            ProcessKind::MdepGaussianMa { m, weights } => {
                if !weights.is_empty() && weights.len() != m + 1 {
                    return Err(Error::InvalidProcess(format!(
                        "moving average with m = {m} needs {} weights, got {}",
                        m + 1,
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !w.is_finite()) || (!weights.is_empty() && weights.iter().all(|&w| w == 0.0)) {
                    return Err(Error::InvalidProcess("weights must be finite and not all zero".into()));
                }
                Ok(())
            }
            ProcessKind::MinorizedMarkov { kernel, eta_floor, t_grid } => {
                let k = kernel.resolve()?;
                for &t in t_grid {
                    let eta = k.eta(t);
                    if eta < *eta_floor {
                        return Err(Error::InvalidProcess(format!(
                            "kernel {} has eta({t}) = {eta} below the floor {eta_floor}",
                            kernel.name
                        )));
                    }
                }
                Ok(())
            }
            ProcessKind::GaussianAr1 { phi } => {
                if !(phi.abs() < 1.0) {
                    return Err(Error::InvalidProcess(format!("AR(1) needs |phi| < 1, got {phi}")));
                }
                Ok(())
            }
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.kind, ProcessKind::Iid { .. })
    }

    /// The i.i.d. marginal, when the process is i.i.d.
    pub fn iid_marginal(&self) -> Option<&Marginal> {
        match &self.kind {
            ProcessKind::Iid { marginal } => Some(marginal),
            _ => None,
        }
    }

    fn ar1_sd(phi: f64) -> f64 {
        (1.0 - phi * phi).sqrt().recip()
    }

    /// Stationary marginal CDF.
    pub fn stationary_cdf(&self, x: f64) -> Result<f64> {
        Ok(match &self.kind {
            ProcessKind::Iid { marginal } => marginal.cdf(x),
            ProcessKind::MdepGaussianMa { .. } => Marginal::StdNormal.cdf(x),
            ProcessKind::MinorizedMarkov { kernel, .. } => kernel.resolve()?.stationary().cdf(x),
            ProcessKind::GaussianAr1 { phi } => Marginal::StdNormal.cdf(x / Self::ar1_sd(*phi)),
        })
    }

    /// The level `x` with `F(x) = p`; `p = 0` and `p = 1` map to `-inf`, `+inf`.
    pub fn stationary_level(&self, p: f64) -> Result<f64> {
        match &self.kind {
            ProcessKind::Iid { marginal } => marginal.level(p),
            ProcessKind::MdepGaussianMa { .. } => Marginal::StdNormal.level(p),
            ProcessKind::MinorizedMarkov { kernel, .. } => kernel.resolve()?.stationary().level(p),
            ProcessKind::GaussianAr1 { phi } => Ok(Marginal::StdNormal.level(p)? * Self::ar1_sd(*phi)),
        }
    }

    pub fn mixing_class(&self) -> Result<MixingClass> {
        Ok(match &self.kind {
            ProcessKind::Iid { .. } => MixingClass::Independent,
            ProcessKind::MdepGaussianMa { m, .. } => MixingClass::MDependent { m: *m },
            ProcessKind::MinorizedMarkov { kernel, .. } => match kernel.resolve()? {
                // Doeblin: the fresh draw couples two chains with probability r.
                Kernel::RefreshRotation { refresh, .. } => MixingClass::GeometricRho { rate: 1.0 - refresh },
                Kernel::StandardizedAr1 { phi } => MixingClass::GeometricRho { rate: phi.abs() },
            },
            ProcessKind::GaussianAr1 { phi } => MixingClass::GeometricRho { rate: phi.abs() },
        })
    }

    /// Raw values of a path of length `n`.
    pub fn sample_values(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        match &self.kind {
            ProcessKind::Iid { marginal } => {
                let q = |u: f64| marginal.quantile(u);
                for _ in 0..n {
                    out.push(match marginal {
                        Marginal::Uniform01 => rng.sample(rand::distr::Open01),
                        Marginal::StdNormal => rng.sample(StandardNormal),
                        _ => q(rng.sample(rand::distr::Open01))?,
                    });
                }
            }
            ProcessKind::MdepGaussianMa { m, weights } => {
                let w = normalized_weights(*m, weights);
                let z: Vec<f64> = (0..n + m).map(|_| rng.sample(StandardNormal)).collect();
                out.extend(z.windows(m + 1).map(|win| win.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()));
            }
            ProcessKind::MinorizedMarkov { kernel, .. } => {
                let k = kernel.resolve()?;
                if n > 0 {
                    let mut x = k.start(rng);
                    out.push(x);
                    for _ in 1..n {
                        x = k.step(x, rng);
                        out.push(x);
                    }
                }
            }
            ProcessKind::GaussianAr1 { phi } => {
                if n > 0 {
                    let mut x = Self::ar1_sd(*phi) * rng.sample::<f64, _>(StandardNormal);
                    out.push(x);
                    for _ in 1..n {
                        x = phi * x + rng.sample::<f64, _>(StandardNormal);
                        out.push(x);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Analytic bound on `P(X_1 <= t, ..., X_i <= t)` when one is known, as
    /// `(C, a)` with the bound `C a^i`.
    pub fn geometric_run_bound(&self, t: f64) -> Result<Option<(f64, f64)>> {
        let f = self.stationary_cdf(t)?;
        Ok(match &self.kind {
            ProcessKind::Iid { .. } => Some((1.0, f)),
            // F^{floor((i-1)/(m+1)) + 1} <= F^{i/(m+1)}.
            ProcessKind::MdepGaussianMa { m, .. } => Some((1.0, f.powf(1.0 / (*m as f64 + 1.0)))),
            ProcessKind::MinorizedMarkov { kernel, .. } => {
                let eta = kernel.resolve()?.eta(t);
                (eta > 0.0).then(|| (f / (1.0 - eta), 1.0 - eta))
            }
            ProcessKind::GaussianAr1 { phi } if *phi <= 0.0 => {
                let eta = Kernel::StandardizedAr1 { phi: *phi }.eta(t / Self::ar1_sd(*phi));
                (eta > 0.0).then(|| (f / (1.0 - eta), 1.0 - eta))
            }
            ProcessKind::GaussianAr1 { .. } => None,
        })
    }

    /// The run-probability bound for length `i` stated for each built-in
    /// class: `F(t)^i`, `F(t)^{floor((i-1)/(m+1)) + 1}` or
    /// `F(t) (1 - eta_t)^{i-1}`.
    pub fn run_bound(&self, t: f64, i: usize) -> Result<Option<f64>> {
        let f = self.stationary_cdf(t)?;
        Ok(match &self.kind {
            ProcessKind::Iid { .. } => Some(f.powi(i as i32)),
            ProcessKind::MdepGaussianMa { m, .. } => Some(f.powi(((i - 1) / (m + 1) + 1) as i32)),
            ProcessKind::MinorizedMarkov { kernel, .. } => {
                Some(f * (1.0 - kernel.resolve()?.eta(t)).powi(i as i32 - 1))
            }
            _ => self.geometric_run_bound(t)?.map(|(c, a)| c * a.powi(i as i32)),
        })
    }
}

fn normalized_weights(m: usize, weights: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = if weights.is_empty() { vec![1.0; m + 1] } else { weights.to_vec() };
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.into_iter().map(|x| x / norm).collect()
}

/// A stationary path of length `n` from replication stream `stream`.
/// Generated paths use the perturb-by-index tie policy; ties have probability
/// zero but floating-point rounding can still produce them.
pub fn generate(spec: &ProcessSpec, n: usize, stream: u64) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::EmptySeries);
    }
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, stream);
    TimeSeries::new(spec.sample_values(n, &mut rng)?, TiePolicy::PerturbByIndex)
}

/// Monte Carlo estimates of `P(X_1 <= t, ..., X_i <= t)` for `i = 1..=i_max`
/// from `reps` independent paths of length `i_max`.
pub fn max_run_profile(
    spec: &ProcessSpec,
    t: f64,
    i_max: usize,
    reps: usize,
    exec: Execution,
) -> Result<Vec<Estimate>> {
    spec.validate()?;
    if reps == 0 || i_max == 0 {
        return Err(Error::InvalidConfig("reps and i_max must be >= 1".into()));
    }
    // Length of the initial run at or below t, capped at i_max.
    let runs: Vec<Result<usize>> = exec.map(reps, |rep| {
        let mut rng = stream_rng(spec.seed, rep as u64);
        let path = spec.sample_values(i_max, &mut rng)?;
        Ok(path.iter().take_while(|&&x| x <= t).count())
    });
    let runs: Vec<usize> = runs.into_iter().collect::<Result<_>>()?;
    let mut survivors = vec![0usize; i_max + 1];
    for r in runs {
        survivors[r] += 1;
    }
    // survivors[k] = number of paths with initial run exactly k.
    let mut at_least = reps;
    let mut out = Vec::with_capacity(i_max);
    for i in 1..=i_max {
        at_least -= survivors[i - 1];
        let p = at_least as f64 / reps as f64;
        out.push(Estimate { mean: p, std_error: (p * (1.0 - p) / reps as f64).sqrt() });
    }
    Ok(out)
}

/// Monte Carlo estimate of `P(X_1 <= t, ..., X_i <= t)` with its binomial
/// standard error.
pub fn max_run_probability_estimate(spec: &ProcessSpec, t: f64, i: usize, reps: usize) -> Result<Estimate> {
    Ok(max_run_profile(spec, t, i, reps, Execution::Parallel)?[i - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub t: f64,
    pub i_max: usize,
    pub reps: usize,
    pub mixing_class: MixingClass,
    pub probabilities: Vec<Estimate>,
    /// `sum_{k <= i} k sqrt(p_k)` for each `i`.
    pub partial_sums: Vec<f64>,
    /// Least-squares slope of `log p_i` against `log i`.
    pub loglog_slope: Option<f64>,
    /// `exp` of the least-squares slope of `log p_i` against `i`.
    pub fitted_geometric_rate: Option<f64>,
    /// `(C, a)` of an analytic bound `C a^i`, when one is known.
    pub analytic_bound: Option<(f64, f64)>,
    /// Bound on `sum_{i > i_max} i sqrt(p_i)` from the analytic or fitted rate.
    pub tail_bound: Option<f64>,
    pub verdict: Verdict,
    pub reason: String,
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `sum_{i > k} i r^i` for `0 <= r < 1`.
fn weighted_geometric_tail(r: f64, k: usize) -> f64 {
    let k = k as f64;
    r.powf(k + 1.0) * ((k + 1.0) - k * r) / (1.0 - r).powi(2)
}

/// Estimates the run probabilities up to `i_max`, their partial sums
/// `sum i sqrt(p_i)` and decay fits. PASS when an analytic geometric bound
/// applies or the fitted decay beats `i^{-4}`.
pub fn max_root_summability_diagnostic(
    spec: &ProcessSpec,
    t: f64,
    i_max: usize,
    reps: usize,
    exec: Execution,
) -> Result<SummabilityReport> {
    if i_max < 2 {
        return Err(Error::InvalidConfig("i_max must be >= 2".into()));
    }
    let probabilities = max_run_profile(spec, t, i_max, reps, exec)?;
    let mut partial_sums = Vec::with_capacity(i_max);
    let mut acc = 0.0;
    for (k, e) in probabilities.iter().enumerate() {
        acc += (k + 1) as f64 * e.mean.sqrt();
        partial_sums.push(acc);
    }
    let positive: Vec<(usize, f64)> = probabilities
        .iter()
        .enumerate()
        .filter(|(_, e)| e.mean > 0.0)
        .map(|(k, e)| (k + 1, e.mean))
        .collect();
    let loglog: Vec<(f64, f64)> = positive.iter().map(|&(i, p)| ((i as f64).ln(), p.ln())).collect();
    let semilog: Vec<(f64, f64)> = positive.iter().map(|&(i, p)| (i as f64, p.ln())).collect();
    let loglog_slope = least_squares_slope(&loglog);
    let fitted_geometric_rate = least_squares_slope(&semilog).map(f64::exp);
    let analytic_bound = spec.geometric_run_bound(t)?.filter(|&(_, a)| a < 1.0);

    let (verdict, reason, tail_bound) = if let Some((c, a)) = analytic_bound {
        let tail = c.sqrt() * weighted_geometric_tail(a.sqrt(), i_max);
        (Verdict::Pass, format!("analytic geometric bound {c:.4} * {a:.4}^i"), Some(tail))
    } else if positive.len() < i_max.min(3) || positive.len() < 2 {
        // The estimate hit zero early: decay is faster than reps can resolve.
        (Verdict::Pass, "run probabilities vanish within i_max".into(), None)
    } else if let Some(rate) = fitted_geometric_rate.filter(|&r| r < 1.0) {
        let tail = weighted_geometric_tail(rate.sqrt(), i_max);
        let poly = loglog_slope.is_some_and(|s| s < -4.0);
        if poly || rate < 0.99 {
            (Verdict::Pass, format!("fitted geometric rate {rate:.4}"), Some(tail))
        } else {
            (Verdict::Inconclusive, format!("fitted rate {rate:.4} too close to 1"), Some(tail))
        }
    } else {
        (Verdict::Fail, "no decay detected".into(), None)
    };
    Ok(SummabilityReport {
        t,
        i_max,
        reps,
        mixing_class: spec.mixing_class()?,
        probabilities,
        partial_sums,
        loglog_slope,
        fitted_geometric_rate,
        analytic_bound,
        tail_bound,
        verdict,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ks::{ks_test, mean};

    fn rotation(refresh: f64) -> ProcessSpec {
        let mut params = BTreeMap::new();
        params.insert("refresh".to_string(), refresh);
        ProcessSpec {
            kind: ProcessKind::MinorizedMarkov {
                kernel: KernelSpec { name: "refresh_rotation".into(), params },
                eta_floor: 0.0,
                t_grid: vec![],
            },
            seed: 5,
        }
    }

    fn all_specs() -> Vec<ProcessSpec> {
        let mut params = BTreeMap::new();
        params.insert("phi".to_string(), -0.4);
        vec![
            ProcessSpec::iid(Marginal::Uniform01, 1),
            ProcessSpec::iid(Marginal::Exponential { rate: 2.0 }, 1),
            ProcessSpec::mdep(3, 2),
            ProcessSpec { kind: ProcessKind::MdepGaussianMa { m: 2, weights: vec![1.0, -2.0, 0.5] }, seed: 9 },
            rotation(0.3),
            ProcessSpec {
                kind: ProcessKind::MinorizedMarkov {
                    kernel: KernelSpec { name: "standardized_ar1".into(), params },
                    eta_floor: 0.0,
                    t_grid: vec![],
                },
                seed: 6,
            },
            ProcessSpec { kind: ProcessKind::GaussianAr1 { phi: 0.6 }, seed: 3 },
        ]
    }

    #[test]
    fn iid_uniform_is_reproducible_and_in_range() {
        let spec = ProcessSpec::iid(Marginal::Uniform01, 42);
        let a = generate(&spec, 5, 0).unwrap();
        let b = generate(&spec, 5, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&x| x > 0.0 && x < 1.0));
        assert_ne!(a, generate(&spec, 5, 1).unwrap());
    }

    #[test]
    fn marginals_pass_ks() {
        for spec in all_specs() {
            // Marginal from the first value of many independent paths.
            let first: Vec<f64> = (0..10_000).map(|r| generate(&spec, 1, r).unwrap().values()[0]).collect();
            let res = ks_test(&first, |x| spec.stationary_cdf(x).unwrap());
            assert!(res.p_value > 0.01, "{spec:?}: {res:?}");
            // Marginal along one long path (thinned to weaken dependence).
            let path = generate(&spec, 200_000, 7).unwrap();
            let thinned: Vec<f64> = path.values().iter().step_by(20).copied().collect();
            let res = ks_test(&thinned, |x| spec.stationary_cdf(x).unwrap());
            assert!(res.p_value > 0.01, "{spec:?} path: {res:?}");
        }
    }

    #[test]
    fn degenerate_special_cases_match_iid_normal() {
        for spec in [
            ProcessSpec { kind: ProcessKind::MdepGaussianMa { m: 0, weights: vec![1.0] }, seed: 8 },
            ProcessSpec { kind: ProcessKind::GaussianAr1 { phi: 0.0 }, seed: 8 },
        ] {
            let v = generate(&spec, 10_000, 0).unwrap();
            let res = ks_test(v.values(), |x| Marginal::StdNormal.cdf(x));
            assert!(res.p_value > 0.01, "{res:?}");
        }
    }

    #[test]
    fn streams_are_uncorrelated() {
        for spec in all_specs() {
            let n = 20_000;
            let a = generate(&spec, n, 100).unwrap();
            let b = generate(&spec, n, 101).unwrap();
            let (ma, mb) = (mean(a.values()), mean(b.values()));
            let cov: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.values().iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.values().iter().map(|y| (y - mb).powi(2)).sum();
            let rho = cov / (va * vb).sqrt();
            assert!(rho.abs() < 4.0 / (n as f64).sqrt(), "{spec:?}: {rho}");
        }
    }

    #[test]
    fn validation_errors() {
        let unknown = ProcessSpec {
            kind: ProcessKind::MinorizedMarkov {
                kernel: KernelSpec { name: "mystery".into(), params: BTreeMap::new() },
                eta_floor: 0.0,
                t_grid: vec![],
            },
            seed: 0,
        };
        assert!(matches!(generate(&unknown, 3, 0), Err(Error::UnknownKernelStationaryLaw(_))));
        let floor = ProcessSpec {
            kind: ProcessKind::MinorizedMarkov {
                kernel: KernelSpec { name: "refresh_rotation".into(), params: [("refresh".to_string(), 0.2)].into() },
                eta_floor: 0.1,
                t_grid: vec![0.3, 0.6],
            },
            seed: 0,
        };
        // eta(0.6) = 0.08 < 0.1.
        assert!(matches!(floor.validate(), Err(Error::InvalidProcess(_))));
        assert!(ProcessSpec { kind: ProcessKind::GaussianAr1 { phi: 1.0 }, seed: 0 }.validate().is_err());
        assert!(ProcessSpec { kind: ProcessKind::MdepGaussianMa { m: 2, weights: vec![1.0] }, seed: 0 }.validate().is_err());
        assert!(generate(&ProcessSpec::mdep(1, 0), 0, 0).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        for spec in all_specs() {
            let s = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ProcessSpec>(&s).unwrap(), spec);
        }
        let parsed: ProcessSpec = serde_json::from_str(
            r#"{"kind": {"type": "mdep_gaussian_ma", "m": 8}, "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(parsed, ProcessSpec::mdep(8, 3));
    }

    #[test]
    fn run_probabilities_respect_bounds() {
        let reps = 20_000;
        let cases = [
            (ProcessSpec::iid(Marginal::Uniform01, 1), 0.8),
            (ProcessSpec::mdep(2, 2), 0.5),
            (rotation(0.3), 0.7),
        ];
        for (spec, t) in cases {
            let prof = max_run_profile(&spec, t, 30, reps, Execution::Parallel).unwrap();
            for (k, e) in prof.iter().enumerate() {
                let bound = spec.run_bound(t, k + 1).unwrap().unwrap();
                assert!(e.mean <= bound + 3.0 * e.std_error.max(1.0 / reps as f64), "{spec:?} i={}", k + 1);
                if spec.is_iid() {
                    assert!((e.mean - bound).abs() <= 3.0 * e.std_error.max(1.0 / reps as f64));
                }
            }
        }
        let single = max_run_probability_estimate(&ProcessSpec::iid(Marginal::Uniform01, 1), 0.5, 3, reps).unwrap();
        assert!((single.mean - 0.125).abs() < 3.0 * single.std_error);
    }

    #[test]
    fn summability_verdicts() {
        let r = max_root_summability_diagnostic(&ProcessSpec::iid(Marginal::Uniform01, 1), 0.9, 40, 5000, Execution::Parallel).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.analytic_bound, Some((1.0, 0.9)));
        assert!(r.partial_sums.windows(2).all(|w| w[1] >= w[0]));
        let tail = r.tail_bound.unwrap();
        assert!(tail.is_finite() && tail > 0.0);
        let expected = weighted_geometric_tail(0.9f64.sqrt(), 40);
        assert!((tail - expected).abs() < 1e-12);
        // Direct tail sum.
        let direct: f64 = (41..20_000).map(|i| i as f64 * 0.9f64.powf(i as f64 / 2.0)).sum();
        assert!((tail - direct).abs() < 1e-6 * direct);

        // eta_t = 0.1 at t = 0.5 with refresh = 0.2.
        let r = max_root_summability_diagnostic(&rotation(0.2), 0.5, 30, 5000, Execution::Parallel).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        let (_, a) = r.analytic_bound.unwrap();
        assert!((a - 0.9).abs() < 1e-12);

        let ar = ProcessSpec { kind: ProcessKind::GaussianAr1 { phi: 0.5 }, seed: 1 };
        let r = max_root_summability_diagnostic(&ar, 0.0, 20, 20_000, Execution::Parallel).unwrap();
        assert!(r.analytic_bound.is_none());
        assert_eq!(r.verdict, Verdict::Pass, "{}", r.reason);
        assert!(r.fitted_geometric_rate.unwrap() < 1.0);
        assert_eq!(r.mixing_class, MixingClass::GeometricRho { rate: 0.5 });
    }
}
