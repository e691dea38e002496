//! Diagrams as measures: integrals of step functions and lifetime functionals,
//! persistent entropy, the ALPS statistic, and the sup-distance between the
//! empirical lifetime tail and a reference tail.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagram::{rectangle_count, PersistenceDiagram, Rectangle};
use crate::error::{Error, Result};
use crate::exec::compensated_sum;

/// `sum_l a_l 1_{R_l}` with every `R_l` in the rectangle class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub terms: Vec<StepTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTerm {
    pub weight: f64,
    pub rect: Rectangle,
}

impl StepFunction {
    pub fn new(terms: Vec<(f64, Rectangle)>) -> Self {
        Self {
            terms: terms
                .into_iter()
                .map(|(weight, rect)| StepTerm { weight, rect })
                .collect(),
        }
    }

    pub fn indicator(rect: Rectangle) -> Self {
        Self::new(vec![(1.0, rect)])
    }

    /// Every finite corner `(s, t)` appearing in the inclusion-exclusion of the
    /// terms.
    pub fn corners(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for term in &self.terms {
            let (s1, s2, t1, t2) = term.rect.coords();
            for s in [s1, s2] {
                for t in [t1, t2] {
                    if s.is_finite() {
                        out.push((s, t));
                    }
                }
            }
        }
        out
    }
}

/// `xi(f) = sum_l a_l xi(R_l)`.
pub fn integrate_step(diagram: &PersistenceDiagram, f: &StepFunction) -> f64 {
    compensated_sum(
        f.terms
            .iter()
            .map(|term| term.weight * rectangle_count(diagram, &term.rect) as f64),
    )
}

/// A function of the lifetime `d - b`.
#[derive(Clone)]
pub enum LifetimeFunctional {
    /// `(d - b)^p`, `p > 0`.
    PowerP(f64),
    /// `(d - b) log(d - b)`, with `0 log 0 = 0`.
    XLogX,
    /// `1{d - b > l}`.
    Indicator(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for LifetimeFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PowerP(p) => write!(f, "PowerP({p})"),
            Self::XLogX => f.write_str("XLogX"),
            Self::Indicator(l) => write!(f, "Indicator({l})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl LifetimeFunctional {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::PowerP(p) if !(p > 0.0 && p.is_finite()) => {
                Err(Error::DomainError(format!("power p = {p} must be positive")))
            }
            Self::Indicator(l) if !(l >= 0.0) => {
                Err(Error::DomainError(format!("indicator level {l} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, lifetime: f64) -> f64 {
        match self {
            Self::PowerP(p) => lifetime.powf(*p),
            Self::XLogX => xlogx(lifetime),
            Self::Indicator(l) => f64::from(u8::from(lifetime > *l)),
            Self::Custom(g) => g(lifetime),
        }
    }

    /// `g(+inf)` when finite.
    fn at_infinity(&self) -> Option<f64> {
        let v = self.eval(f64::INFINITY);
        v.is_finite().then_some(v)
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `sum g(d - b)` over the finite points (`restricted`) or over all points.
/// The unrestricted form needs `g(+inf)` to be finite.
pub fn lifetime_integral(
    diagram: &PersistenceDiagram,
    g: &LifetimeFunctional,
    restricted: bool,
) -> Result<f64> {
    g.validate()?;
    let finite = compensated_sum(diagram.finite_lifetimes().map(|l| g.eval(l)));
    if restricted || diagram.infinite_point().is_none() {
        return Ok(finite);
    }
    let at_inf = g.at_infinity().ok_or(Error::InfiniteLifetime)?;
    Ok(finite + at_inf)
}

/// [`lifetime_integral`] divided by the matching point count.
pub fn normalized_lifetime_integral(
    diagram: &PersistenceDiagram,
    g: &LifetimeFunctional,
    restricted: bool,
) -> Result<f64> {
    let total = lifetime_integral(diagram, g, restricted)?;
    let count = if restricted {
        diagram.finite_len()
    } else {
        diagram.len()
    };
    if count == 0 {
        return Err(if restricted {
            Error::NoFinitePoints
        } else {
            Error::EmptyDiagram
        });
    }
    Ok(total / count as f64)
}

/// Shannon entropy (natural log) of the finite lifetimes normalized to sum to
/// one. The infinite bar is left out.
pub fn persistent_entropy(diagram: &PersistenceDiagram) -> Result<f64> {
    if diagram.finite_len() == 0 {
        return Err(Error::NoFinitePoints);
    }
    let total = compensated_sum(diagram.finite_lifetimes());
    if total == 0.0 {
        // Only zero-length bars: every share is 0/0; treat as no information.
        return Ok(0.0);
    }
    let h = -compensated_sum(diagram.finite_lifetimes().map(|l| xlogx(l / total)));
    Ok(h.max(0.0))
}

/// `int_0^L log #{points with d - b > l} dl`, exactly, as a sum over the
/// sorted finite lifetimes. `L = +inf` gives the untruncated statistic, which
/// is finite because the infinite point keeps the count at one or more.
pub fn alps(diagram: &PersistenceDiagram, truncation: f64) -> Result<f64> {
    if diagram.is_empty() {
        return Err(Error::EmptyDiagram);
    }
    if !(truncation > 0.0) {
        return Err(Error::DomainError(format!(
            "truncation L = {truncation} must be positive"
        )));
    }
    let mut lifetimes: Vec<f64> = diagram.finite_lifetimes().collect();
    lifetimes.sort_by(f64::total_cmp);
    let mut alive = diagram.len();
    let mut prev = 0.0;
    let mut pieces = Vec::with_capacity(lifetimes.len() + 1);
    for l in lifetimes {
        if prev >= truncation {
            break;
        }
        let upper = l.min(truncation);
        if upper > prev {
            pieces.push((upper - prev) * (alive as f64).ln());
            prev = upper;
        }
        alive -= 1;
    }
    if prev < truncation && alive > 0 && truncation.is_finite() {
        pieces.push((truncation - prev) * (alive as f64).ln());
    }
    Ok(compensated_sum(pieces))
}

/// `sup_{l >= 0} | #{d - b > l} / #points - tail(l) |`.
///
/// The empirical tail is a right-continuous step function with jumps at the
/// finite lifetimes; `tail` must be nonincreasing. On each plateau `[a, b)` the
/// supremum is attained at `a` or at the left limit `b-`, which is evaluated at
/// the largest float below `b`. On the last plateau the far end is `tail(+inf)`.
pub fn lifetime_ecdf_sup_distance<T>(diagram: &PersistenceDiagram, tail: T) -> Result<f64>
where
    T: Fn(f64) -> f64,
{
    if diagram.is_empty() {
        return Err(Error::EmptyDiagram);
    }
    let total = diagram.len() as f64;
    let mut lifetimes: Vec<f64> = diagram.finite_lifetimes().collect();
    lifetimes.sort_by(f64::total_cmp);
    // Plateau boundaries: 0, distinct positive lifetimes, +inf.
    let mut cuts = vec![0.0];
    cuts.extend(lifetimes.iter().cloned().filter(|&l| l > 0.0));
    cuts.dedup();
    cuts.push(f64::INFINITY);
    let mut sup = 0.0f64;
    let mut dead = lifetimes.iter().filter(|&&l| l <= 0.0).count();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        while dead < lifetimes.len() && lifetimes[dead] <= a {
            dead += 1;
        }
        let level = (diagram.len() - dead) as f64 / total;
        let left_of_b = if b.is_finite() { b.next_down() } else { b };
        sup = sup.max((level - tail(a)).abs());
        sup = sup.max((level - tail(left_of_b)).abs());
    }
    Ok(sup)
}

/// Summary statistics of one diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct StatsReport {
    pub entropy: Option<f64>,
    pub alps: f64,
    #[serde(with = "crate::ext_float")]
    pub alps_truncation_L: f64,
    pub total_persistence_p: f64,
    pub n_points: usize,
    pub n_finite_points: usize,
}

/// Entropy (or `None` without finite points), ALPS truncated at `truncation`,
/// and degree-`p` total persistence of the finite points.
pub fn stats_report(diagram: &PersistenceDiagram, truncation: f64, p: f64) -> Result<StatsReport> {
    Ok(StatsReport {
        entropy: persistent_entropy(diagram).ok(),
        alps: alps(diagram, truncation)?,
        alps_truncation_L: truncation,
        total_persistence_p: lifetime_integral(diagram, &LifetimeFunctional::PowerP(p), true)?,
        n_points: diagram.len(),
        n_finite_points: diagram.finite_len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{compute_diagram, Point, TiePolicy, TimeSeries};
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;
    const LN2: f64 = std::f64::consts::LN_2;

    fn diag(points: &[(f64, f64)]) -> PersistenceDiagram {
        PersistenceDiagram::from_points(points.iter().map(|&(b, d)| Point::new(b, d))).unwrap()
    }

    #[test]
    fn step_integral_examples() {
        let d = diag(&[(2.0, 3.0), (1.0, INF)]);
        let r = Rectangle::new(0.0, 2.0, 2.0, INF).unwrap();
        assert_eq!(integrate_step(&d, &StepFunction::indicator(r)), 2.0);
        assert_eq!(integrate_step(&d, &StepFunction::default()), 0.0);
        let cancel = StepFunction::new(vec![(1.0, r), (-1.0, r)]);
        assert_eq!(integrate_step(&d, &cancel), 0.0);
    }

    #[test]
    fn lifetime_integral_examples() {
        let d = diag(&[(2.0, 3.0), (1.0, INF)]);
        assert_eq!(lifetime_integral(&d, &LifetimeFunctional::PowerP(1.0), true).unwrap(), 1.0);
        assert_eq!(
            lifetime_integral(&d, &LifetimeFunctional::PowerP(1.0), false),
            Err(Error::InfiniteLifetime)
        );
        assert_eq!(lifetime_integral(&d, &LifetimeFunctional::Indicator(0.5), false).unwrap(), 2.0);
        let twins = diag(&[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(lifetime_integral(&twins, &LifetimeFunctional::XLogX, true).unwrap(), 0.0);
        assert_eq!(
            lifetime_integral(&diag(&[(0.0, 2.0)]), &LifetimeFunctional::PowerP(2.0), true).unwrap(),
            4.0
        );
        assert!(lifetime_integral(&d, &LifetimeFunctional::PowerP(0.0), true).is_err());
        let custom = LifetimeFunctional::Custom(Arc::new(|l: f64| (-l).exp()));
        let v = lifetime_integral(&d, &custom, false).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(
            normalized_lifetime_integral(&twins, &LifetimeFunctional::PowerP(1.0), true).unwrap(),
            1.0
        );
    }

    #[test]
    fn entropy_examples() {
        assert!((persistent_entropy(&diag(&[(0.0, 1.0), (5.0, 6.0), (0.0, INF)])).unwrap() - LN2).abs() < 1e-15);
        assert_eq!(persistent_entropy(&diag(&[(0.0, 3.0), (0.0, INF)])).unwrap(), 0.0);
        let five: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, k as f64 + 0.5)).collect();
        assert!((persistent_entropy(&diag(&five)).unwrap() - 5f64.ln()).abs() < 1e-14);
        assert_eq!(persistent_entropy(&diag(&[(0.0, INF)])), Err(Error::NoFinitePoints));
    }

    #[test]
    fn alps_examples() {
        let c = 0.7;
        let d = diag(&[(0.0, c), (-1.0, INF)]);
        assert!((alps(&d, INF).unwrap() - c * LN2).abs() < 1e-15);
        assert_eq!(alps(&diag(&[(3.0, INF)]), INF).unwrap(), 0.0);
        let k3 = diag(&[(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (-1.0, INF)]);
        assert!((alps(&k3, 0.4).unwrap() - 0.4 * 4f64.ln()).abs() < 1e-15);
        // log 4 on [0,1), log 3 on [1,2), log 2 on [2,3), log 1 after.
        let full = 4f64.ln() + 3f64.ln() + 2f64.ln();
        assert!((alps(&k3, INF).unwrap() - full).abs() < 1e-14);
        assert!((alps(&k3, 2.5).unwrap() - (4f64.ln() + 3f64.ln() + 0.5 * 2f64.ln())).abs() < 1e-14);
        assert_eq!(alps(&PersistenceDiagram::default(), INF), Err(Error::EmptyDiagram));
        assert!(alps(&k3, 0.0).is_err());
    }

    #[test]
    fn sup_distance_examples() {
        let d = diag(&[(0.0, 0.5), (3.0, INF)]);
        let uniform = |l: f64| (1.0 - l).clamp(0.0, 1.0);
        assert!((lifetime_ecdf_sup_distance(&d, uniform).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(lifetime_ecdf_sup_distance(&diag(&[(1.0, INF)]), |_| 1.0).unwrap(), 0.0);
        // Tail equal to the empirical step function itself.
        let d = diag(&[(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (-1.0, INF)]);
        let own = |l: f64| {
            let alive = [1.0, 2.0, 3.0].iter().filter(|&&x| x > l).count() + 1;
            alive as f64 / 4.0
        };
        assert_eq!(lifetime_ecdf_sup_distance(&d, own).unwrap(), 0.0);
        // A constant 1/2 tail: the largest gap is at l = 0 (empirical 1).
        assert_eq!(lifetime_ecdf_sup_distance(&d, |_| 0.5).unwrap(), 0.5);
    }

    #[test]
    fn stats_report_json_shape() {
        let d = diag(&[(0.0, 1.0), (5.0, 6.0), (0.0, INF)]);
        let r = stats_report(&d, INF, 1.0).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["alps_truncation_L"], "inf");
        assert_eq!(v["n_points"], 3);
        assert_eq!(v["n_finite_points"], 2);
        assert_eq!(v["total_persistence_p"], 2.0);
        let mono = diag(&[(0.0, INF)]);
        assert_eq!(stats_report(&mono, 1.0, 1.0).unwrap().entropy, None);
    }

    fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1000i32..1000, 2..80)
            .prop_map(|v| v.into_iter().map(|k| k as f64 / 8.0).collect())
    }

    proptest! {
        #[test]
        fn entropy_bounds_and_alps_monotone(v in series_strategy(), l1 in 0.01f64..50.0, l2 in 0.01f64..50.0) {
            let d = compute_diagram(&TimeSeries::new(v, TiePolicy::PerturbByIndex).unwrap());
            if let Ok(h) = persistent_entropy(&d) {
                prop_assert!(h >= -1e-12 && h <= (d.finite_len() as f64).ln() + 1e-12);
            }
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(alps(&d, lo).unwrap() <= alps(&d, hi).unwrap() + 1e-12);
            prop_assert!(alps(&d, hi).unwrap() <= alps(&d, INF).unwrap() + 1e-12);
            prop_assert!(alps(&d, INF).unwrap().is_finite());
        }

        #[test]
        fn scaling_the_series(v in series_strategy(), c in 0.1f64..20.0) {
            let base = TimeSeries::new(v.clone(), TiePolicy::PerturbByIndex).unwrap();
            let scaled = TimeSeries::new(v.iter().map(|x| x * c).collect(), TiePolicy::PerturbByIndex).unwrap();
            let (d, ds) = (compute_diagram(&base), compute_diagram(&scaled));
            for (p, q) in d.finite_points().iter().zip(ds.finite_points()) {
                prop_assert!((q.lifetime() - c * p.lifetime()).abs() <= 1e-9 * (1.0 + q.lifetime()));
            }
            if let (Ok(h), Ok(hs)) = (persistent_entropy(&d), persistent_entropy(&ds)) {
                prop_assert!((h - hs).abs() < 1e-9);
            }
            let (a, a_s) = (alps(&d, INF).unwrap(), alps(&ds, INF).unwrap());
            prop_assert!((a_s - c * a).abs() <= 1e-9 * (1.0 + a_s.abs()));
        }

        #[test]
        fn step_integral_is_linear(v in series_strategy(), w1 in -5.0f64..5.0, w2 in -5.0f64..5.0) {
            let d = compute_diagram(&TimeSeries::new(v, TiePolicy::PerturbByIndex).unwrap());
            let r1 = Rectangle::new(-100.0, 0.0, 10.0, INF).unwrap();
            let r2 = Rectangle::new(-50.0, 20.0, 30.0, 90.0).unwrap();
            let f = StepFunction::new(vec![(w1, r1), (w2, r2)]);
            let lin = w1 * integrate_step(&d, &StepFunction::indicator(r1))
                + w2 * integrate_step(&d, &StepFunction::indicator(r2));
            prop_assert!((integrate_step(&d, &f) - lin).abs() < 1e-9);
        }
    }
}
