//! Closed-form limits for i.i.d. sequences with a continuous marginal `F`:
//! the limiting Betti ratio, the limiting diagram distribution with its
//! density and lifetime tail, exact finite-n expected Betti numbers, and a
//! sampler for the limiting distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::diagram::Rectangle;
use crate::error::{Error, Result};
use crate::exec::compensated_sum;
use crate::oracle::geometric_weighted_sum;
use crate::quadrature::{integrate, integrate_2d};

/// A continuous distribution on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Marginal {
    Uniform01,
    StdNormal,
    Exponential { rate: f64 },
    Tabulated(TabulatedCdf),
}

/// Tabulated marginal: `F` linear between the nodes, `f` constant on each
/// `[x_k, x_{k+1})` with value `f_k`. The last `f` entry is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabulatedRepr", into = "TabulatedRepr")]
pub struct TabulatedCdf {
    x: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TabulatedRepr {
    x: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

impl TryFrom<TabulatedRepr> for TabulatedCdf {
    type Error = Error;
    fn try_from(r: TabulatedRepr) -> Result<Self> {
        TabulatedCdf::new(r.x, r.cdf, r.pdf)
    }
}

impl From<TabulatedCdf> for TabulatedRepr {
    fn from(t: TabulatedCdf) -> Self {
        TabulatedRepr { x: t.x, cdf: t.cdf, pdf: t.pdf }
    }
}

impl TabulatedCdf {
    pub fn new(x: Vec<f64>, cdf: Vec<f64>, pdf: Vec<f64>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("tabulated marginal: {msg}")));
        if x.len() < 2 || x.len() != cdf.len() || x.len() != pdf.len() {
            return bad("need at least two rows and equal column lengths");
        }
        if x.iter().chain(&cdf).chain(&pdf).any(|v| !v.is_finite()) {
            return bad("non-finite entry");
        }
        if x.windows(2).any(|w| w[0] >= w[1]) {
            return bad("x must be strictly increasing");
        }
        if cdf.windows(2).any(|w| w[0] > w[1]) || cdf[0] != 0.0 || *cdf.last().unwrap() != 1.0 {
            return bad("F must be nondecreasing from 0 to 1");
        }
        if pdf.iter().any(|&f| f < 0.0) {
            return bad("f must be nonnegative");
        }
        Ok(Self { x, cdf, pdf })
    }

    /// Rows `x,F,f`; a non-numeric first line is taken as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let (mut x, mut cdf, mut pdf) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
            match parsed {
                Some(v) if v.len() == 3 => {
                    x.push(v[0]);
                    cdf.push(v[1]);
                    pdf.push(v[2]);
                }
                _ if lineno == 0 && x.is_empty() => continue,
                _ => return Err(Error::Parse(format!("line {}: expected x,F,f", lineno + 1))),
            }
        }
        Self::new(x, cdf, pdf)
    }

    fn segment(&self, x: f64) -> Option<usize> {
        if x < self.x[0] || x >= *self.x.last().unwrap() {
            return None;
        }
        Some(self.x.partition_point(|&v| v <= x) - 1)
    }

    fn cdf(&self, x: f64) -> f64 {
        match self.segment(x) {
            None if x < self.x[0] => 0.0,
            None => 1.0,
            Some(k) => {
                let w = (x - self.x[k]) / (self.x[k + 1] - self.x[k]);
                self.cdf[k] + w * (self.cdf[k + 1] - self.cdf[k])
            }
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        self.segment(x).map_or(0.0, |k| self.pdf[k])
    }

    fn quantile(&self, u: f64) -> f64 {
        // First segment whose upper F reaches u and that actually rises.
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.x[k - 1] + w * (self.x[k] - self.x[k - 1])
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::Exponential { rate } if !(*rate > 0.0 && rate.is_finite()) => Err(
                Error::InvalidConfig(format!("exponential rate {rate} must be positive")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Marginal::Uniform01 => "uniform01".into(),
            Marginal::StdNormal => "std_normal".into(),
            Marginal::Exponential { rate } => format!("exponential({rate})"),
            Marginal::Tabulated(_) => "tabulated".into(),
        }
    }

    /// `F(x)`, with `F(-inf) = 0` and `F(+inf) = 1`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        match self {
            Marginal::Uniform01 => x.clamp(0.0, 1.0),
            Marginal::StdNormal => std_normal().cdf(x),
            Marginal::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Marginal::Tabulated(t) => t.cdf(x),
        }
    }

    /// `1 - F(x)`, computed without cancellation where possible.
    pub fn sf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 0.0;
        }
        match self {
            Marginal::StdNormal if x.is_finite() => std_normal().sf(x),
            Marginal::Exponential { rate } if x > 0.0 => (-rate * x).exp(),
            _ => 1.0 - self.cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !x.is_finite() {
            return 0.0;
        }
        match self {
            Marginal::Uniform01 => f64::from(u8::from((0.0..1.0).contains(&x))),
            Marginal::StdNormal => std_normal().pdf(x),
            Marginal::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
            Marginal::Tabulated(t) => t.pdf(x),
        }
    }

    /// `F^{-1}(u)` for `u` in `(0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::QuantileUnavailable(format!(
                "{}: quantile requested at u = {u}",
                self.name()
            )));
        }
        Ok(match self {
            Marginal::Uniform01 => u,
            Marginal::StdNormal => std_normal().inverse_cdf(u),
            Marginal::Exponential { rate } => -(-u).ln_1p() / rate,
            Marginal::Tabulated(t) => t.quantile(u),
        })
    }

    /// Right end of the support.
    pub fn support_max(&self) -> f64 {
        match self {
            Marginal::Uniform01 => 1.0,
            Marginal::Tabulated(t) => *t.x.last().unwrap(),
            _ => f64::INFINITY,
        }
    }

    /// The value `x` with `F(x) = p`, allowing the endpoints: `p = 0` maps to
    /// `-inf` and `p = 1` to `+inf`.
    pub fn level(&self, p: f64) -> Result<f64> {
        if p <= 0.0 {
            Ok(f64::NEG_INFINITY)
        } else if p >= 1.0 {
            Ok(f64::INFINITY)
        } else {
            self.quantile(p)
        }
    }
}

fn check_thresholds(s: f64, t: f64) -> Result<()> {
    if s.is_nan() || t.is_nan() || s > t {
        return Err(Error::InvalidThresholds { s, t });
    }
    Ok(())
}

/// `lim beta^{s,t}_n / n = (1 - F(t)) F(s) / (1 - F(t) + F(s))` and `0` when
/// `F(s) = 0`.
pub fn limiting_betti_ratio(m: &Marginal, s: f64, t: f64) -> Result<f64> {
    check_thresholds(s, t)?;
    Ok(ratio_uv(m.cdf(s), m.sf(t)))
}

// (1 - F(t)) F(s) / (1 - F(t) + F(s)) in terms of a = F(s), c = 1 - F(t).
fn ratio_uv(a: f64, c: f64) -> f64 {
    if a <= 0.0 || c <= 0.0 {
        0.0
    } else {
        a * c / (a + c)
    }
}

/// `xi_0((-inf, s] x (t, inf])` for the i.i.d. limit.
pub fn null_corner_mass(m: &Marginal, s: f64, t: f64) -> Result<f64> {
    Ok(3.0 * limiting_betti_ratio(m, s, t)?)
}

/// `xi_0(R)` by inclusion-exclusion of the corner masses.
pub fn null_rectangle_mass(m: &Marginal, r: &Rectangle) -> Result<f64> {
    let (s1, s2, t1, t2) = r.coords();
    let corner = |s: f64, t: f64| 3.0 * ratio_uv(m.cdf(s), m.sf(t));
    let mass = corner(s2, t1) - corner(s2, t2) - corner(s1, t1) + corner(s1, t2);
    Ok(mass.clamp(0.0, 1.0))
}

/// Density of the limiting distribution in probability coordinates
/// `u = F(x)`, `v = F(y)`.
pub fn null_density_uv(u: f64, v: f64) -> f64 {
    let c = 1.0 - v;
    if u <= 0.0 || c <= 0.0 {
        return 0.0;
    }
    6.0 * u * c / (c + u).powi(3)
}

/// `6 f(x) f(y) (1 - F(y)) F(x) / (1 - F(y) + F(x))^3` on `x < y`.
pub fn null_density(m: &Marginal, x: f64, y: f64) -> Result<f64> {
    if !(x < y) {
        return Err(Error::OutsideDomain { x, y });
    }
    let (fx, fy) = (m.pdf(x), m.pdf(y));
    if fx == 0.0 || fy == 0.0 {
        return Ok(0.0);
    }
    let (a, c) = (m.cdf(x), m.sf(y));
    if a <= 0.0 || c <= 0.0 {
        return Ok(0.0);
    }
    Ok(6.0 * fx * fy * a * c / (a + c).powi(3))
}

/// `int_R null_density` by iterated adaptive quadrature after the change of
/// variables `u = F(x)`, `v = F(y)`, which maps infinite sides to finite ones.
pub fn null_density_mass(m: &Marginal, r: &Rectangle, tol: f64) -> Result<f64> {
    let (s1, s2, t1, t2) = r.coords();
    let (u0, u1, v0, v1) = (m.cdf(s1), m.cdf(s2), m.cdf(t1), m.cdf(t2));
    if u1 <= u0 || v1 <= v0 {
        return Ok(0.0);
    }
    let integrand = |u: f64, v: f64| -> f64 {
        let (Ok(x), Ok(y)) = (m.quantile(u), m.quantile(v)) else {
            return 0.0;
        };
        let (fx, fy) = (m.pdf(x), m.pdf(y));
        if fx > 0.0 && fy > 0.0 && x < y {
            null_density(m, x, y).unwrap_or(0.0) / (fx * fy)
        } else {
            null_density_uv(u, v)
        }
    };
    Ok(integrate_2d(integrand, u0, u1, |_| v0, |_| v1, tol)?.value)
}

/// `xi_0(Delta_l) = 3 E[((1 - F(X + l)) / (1 - F(X + l) + F(X)))^2]`,
/// integrated over `u = F(X)` in `(0, 1)`.
pub fn null_lifetime_tail(m: &Marginal, lifetime: f64) -> Result<f64> {
    if lifetime.is_nan() || lifetime < 0.0 {
        return Err(Error::NegativeLifetime(lifetime));
    }
    if lifetime == f64::INFINITY {
        return Ok(0.0);
    }
    // The integrand decreases in u and vanishes once X + l leaves the support;
    // integrating over the nonzero part keeps narrow supports visible.
    let upper = m.cdf(m.support_max() - lifetime);
    if upper <= 0.0 {
        return Ok(0.0);
    }
    let mut failure = None;
    let q = integrate(
        |u| match m.quantile(u) {
            Ok(x) => {
                let c = m.sf(x + lifetime);
                if c <= 0.0 {
                    0.0
                } else {
                    (c / (c + u)).powi(2)
                }
            }
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        0.0,
        upper,
        1e-11,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((3.0 * q.value).clamp(0.0, 1.0))
}

/// `int_0^inf g'(l) xi_0(Delta_l) dl`, the limiting mean of `g(d - b)` over
/// finite points for `g(0) = 0`, integrated after `l = x / (1 - x)`.
pub fn null_lifetime_moment<G: Fn(f64) -> f64>(m: &Marginal, g_prime: G) -> Result<f64> {
    let mut failure = None;
    let q = integrate(
        |x| {
            let l = x / (1.0 - x);
            match null_lifetime_tail(m, l) {
                Ok(tail) if tail > 0.0 => g_prime(l) * tail / (1.0 - x).powi(2),
                Ok(_) => 0.0,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        1.0,
        1e-9,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(q.value),
    }
}

/// Limit of `E_n - log #finite points`:
/// `-E[l log l] / E[l] + log E[l]` under the limiting lifetime law.
pub fn null_entropy_offset(m: &Marginal) -> Result<f64> {
    let mean = null_lifetime_moment(m, |_| 1.0)?;
    let xlogx = null_lifetime_moment(m, |l| l.ln() + 1.0)?;
    Ok(-xlogx / mean + mean.ln())
}

/// Limit of `L log #points - A^L_n`: `int_0^L -log xi_0(Delta_l) dl`.
pub fn null_alps_offset(m: &Marginal, truncation: f64) -> Result<f64> {
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(Error::DomainError(format!("truncation L = {truncation} must be finite and positive")));
    }
    let mut failure = None;
    let q = integrate(
        |l| match null_lifetime_tail(m, l) {
            Ok(tail) => -tail.ln(),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        0.0,
        truncation,
        1e-10,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(q.value),
    }
}

/// `p_i(s, t) = F(t)^i - (F(t) - F(s))^i`: probability that `i` i.i.d. draws
/// all lie at or below `t` and at least one lies at or below `s`.
pub fn p_i_run_probability(m: &Marginal, i: u64, s: f64, t: f64) -> Result<f64> {
    check_thresholds(s, t)?;
    if i == 0 {
        return Err(Error::DomainError("run length must be >= 1".into()));
    }
    Ok(run_probability(m.cdf(s), m.cdf(t), i))
}

fn run_probability(fs: f64, ft: f64, i: u64) -> f64 {
    if fs <= 0.0 || ft <= 0.0 {
        return 0.0;
    }
    let i = i as f64;
    // F(t)^i (1 - (1 - F(s)/F(t))^i), stable when F(s) << F(t).
    let ratio = (fs / ft).min(1.0);
    let miss = if ratio >= 1.0 { 1.0 } else { -(i * (-ratio).ln_1p()).exp_m1() };
    (i * ft.ln()).exp() * miss
}

/// Exact `E[beta^{s,t}_{0,n}]` for an i.i.d. sequence:
/// `p_n + sum_{i=1}^{n-1} [2 p_i (1 - F(t)) + (n - i - 1) p_i (1 - F(t))^2]`.
pub fn expected_betti_finite_n(m: &Marginal, n: u64, s: f64, t: f64) -> Result<f64> {
    check_thresholds(s, t)?;
    if n == 0 {
        return Err(Error::DomainError("n must be >= 1".into()));
    }
    let (fs, ft, c) = (m.cdf(s), m.cdf(t), m.sf(t));
    let p = |i: u64| run_probability(fs, ft, i);
    let one_flank = compensated_sum((1..n).map(|i| 2.0 * p(i) * c));
    let two_flanks = compensated_sum((1..n).map(|i| (n - i - 1) as f64 * p(i) * c * c));
    Ok(p(n) + one_flank + two_flanks)
}

/// The same expectation with the two-flank sum in closed form through
/// `sum_{i=1}^N (N - i + 1) a^i`.
pub fn expected_betti_closed_form(m: &Marginal, n: u64, s: f64, t: f64) -> Result<f64> {
    check_thresholds(s, t)?;
    if n == 0 {
        return Err(Error::DomainError("n must be >= 1".into()));
    }
    let (fs, ft, c) = (m.cdf(s), m.cdf(t), m.sf(t));
    let p = |i: u64| run_probability(fs, ft, i);
    let one_flank = compensated_sum((1..n).map(|i| 2.0 * p(i) * c));
    let two_flanks = if n >= 3 && fs > 0.0 {
        let g = |a: f64| -> Result<f64> {
            if a <= 0.0 {
                Ok(0.0)
            } else {
                geometric_weighted_sum(a.min(1.0), n - 2)
            }
        };
        c * c * (g(ft)? - g(ft - fs)?)
    } else {
        0.0
    };
    Ok(p(n) + one_flank + two_flanks)
}

/// Counters of the rejection sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Envelope constant of the sampler: the `Beta(2, 2)` density `6 w (1 - w)`
/// is at most 3/2 times the uniform proposal, so a proposal is accepted with
/// probability `4 w (1 - w)` and the acceptance rate is `2/3`.
pub const SAMPLER_ENVELOPE: f64 = 1.5;

/// Sampler for the limiting diagram distribution.
///
/// In probability coordinates `a = F(x)`, `c = 1 - F(y)` the density is
/// `6 a c / (a + c)^3` on `a + c < 1`. With `S = a + c` and `W = a / S` it
/// factors into `S ~ U(0, 1)` and `W ~ Beta(2, 2)`; `W` is drawn by rejection
/// from a uniform proposal.
#[derive(Debug, Clone)]
pub struct NullSampler {
    marginal: Marginal,
    stats: AcceptanceStats,
}

impl NullSampler {
    pub fn new(marginal: Marginal) -> Result<Self> {
        marginal.validate()?;
        marginal.quantile(0.5)?;
        Ok(Self { marginal, stats: AcceptanceStats::default() })
    }

    pub fn stats(&self) -> AcceptanceStats {
        self.stats
    }

    /// One draw in probability coordinates `(F(x), F(y))`.
    pub fn sample_uv<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (f64, f64) {
        let s: f64 = open01(rng);
        let w = loop {
            let w: f64 = open01(rng);
            let accept: f64 = rng.random();
            self.stats.proposals += 1;
            if accept < 4.0 * w * (1.0 - w) {
                self.stats.accepted += 1;
                break w;
            }
        };
        (s * w, 1.0 - s * (1.0 - w))
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(f64, f64)> {
        loop {
            let (u, v) = self.sample_uv(rng);
            let (x, y) = (self.marginal.quantile(u)?, self.marginal.quantile(v)?);
            // Quantiles of nearly equal levels can round together.
            if x < y {
                return Ok((x, y));
            }
        }
    }
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand::distr::Open01)
}

/// One draw `(birth, death)` from the limiting diagram distribution.
pub fn sample_null_diagram_point<R: Rng + ?Sized>(m: &Marginal, rng: &mut R) -> Result<(f64, f64)> {
    NullSampler::new(m.clone())?.sample(rng)
}

/// Ratio of the limiting density to the proposal `2 f(x) f(y)` on `x < y`, in
/// probability coordinates: `3 u (1 - v) / (1 - v + u)^3`. It is unbounded
/// near `(u, v) = (0, 1)`, so uniform proposals on the triangle admit no
/// finite envelope.
pub fn triangle_proposal_ratio(u: f64, v: f64) -> f64 {
    null_density_uv(u, v) / 2.0
}

/// Largest [`triangle_proposal_ratio`] on a `k x k` grid of the triangle.
pub fn measured_max_proposal_ratio(k: usize) -> f64 {
    let mut best = 0.0f64;
    for a in 1..k {
        for b in (a + 1)..k {
            let (u, v) = (a as f64 / k as f64, b as f64 / k as f64);
            best = best.max(triangle_proposal_ratio(u, v));
        }
    }
    best
}

/// Total mass check on the diagram triangle, in probability coordinates:
/// the staircase `sum_k xi_0((p_k, p_{k+1}] x (p_{k+1}, inf])` over a uniform
/// partition of `[0, 1]` misses an `O(1/k)` strip along the diagonal.
pub fn staircase_total_mass(k: usize) -> f64 {
    let corner = |a: f64, b: f64| 3.0 * ratio_uv(a, 1.0 - b);
    compensated_sum((0..k).map(|j| {
        let (lo, hi) = (j as f64 / k as f64, (j + 1) as f64 / k as f64);
        corner(hi, hi) - corner(lo, hi)
    }))
}

/// Total mass by Richardson extrapolation of [`staircase_total_mass`].
pub fn total_mass_extrapolated(k: usize) -> f64 {
    let (a, b, c) = (staircase_total_mass(k), staircase_total_mass(2 * k), staircase_total_mass(4 * k));
    let r1 = 2.0 * b - a;
    let r2 = 2.0 * c - b;
    (4.0 * r2 - r1) / 3.0
}
