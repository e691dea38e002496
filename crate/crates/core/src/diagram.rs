//! Zero-dimensional sublevel-set persistence of a finite real sequence.
//!
//! The sequence `x_1, .., x_n` is the vertex function of the path graph
//! `v_1 - v_2 - .. - v_n`; an edge enters the filtration at the larger of its
//! endpoint values. The sequence is padded with `x_0 = x_{n+1} = +inf`, so the
//! endpoints may be local minima and every run of values below a level is
//! closed off on both sides.
//!
//! Diagrams are multisets of `(birth, death)` pairs and are treated as counting
//! measures on `{(b, d) : -inf < b < d <= +inf}`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How equal neighbouring values are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Reject series with two equal consecutive values.
    #[default]
    Error,
    /// Order equal values by position (earlier is smaller). Stored values are
    /// left untouched; only comparisons see the tiebreak.
    PerturbByIndex,
}

/// A finite, non-empty real sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    tie_policy: TiePolicy,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, tie_policy: TiePolicy) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index, value });
        }
        if tie_policy == TiePolicy::Error {
            if let Some(index) = values.windows(2).position(|w| w[0] == w[1]) {
                return Err(Error::ConsecutiveTie {
                    index,
                    value: values[index],
                });
            }
        }
        Ok(Self { values, tie_policy })
    }

    /// Shorthand for [`TiePolicy::Error`].
    pub fn strict(values: Vec<f64>) -> Result<Self> {
        Self::new(values, TiePolicy::Error)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    /// Padded value `x_{k,n}` for `k = 0..=n+1` (one-based, `+inf` outside `1..=n`).
    pub fn padded(&self, k: usize) -> f64 {
        if k == 0 || k > self.values.len() {
            f64::INFINITY
        } else {
            self.values[k - 1]
        }
    }

    /// Total order on zero-based positions: by value, then by position.
    pub fn cmp_positions(&self, a: usize, b: usize) -> Ordering {
        self.values[a]
            .total_cmp(&self.values[b])
            .then_with(|| a.cmp(&b))
    }

    /// Zero-based positions sorted by [`TimeSeries::cmp_positions`].
    pub fn filtration_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_unstable_by(|&a, &b| self.cmp_positions(a, b));
        order
    }
}

/// One point of a diagram. `death` is `f64::INFINITY` for the essential class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub birth: f64,
    pub death: f64,
}

impl Point {
    pub fn new(birth: f64, death: f64) -> Self {
        Self { birth, death }
    }

    pub fn is_finite(&self) -> bool {
        self.death.is_finite()
    }

    pub fn lifetime(&self) -> f64 {
        self.death - self.birth
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.birth
            .total_cmp(&other.birth)
            .then_with(|| self.death.total_cmp(&other.death))
    }
}

/// A persistence diagram. Finite points are kept sorted by `(birth, death)`
/// with true multiplicities; there is at most one infinite point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PersistenceDiagram {
    finite: Vec<Point>,
    infinite_birth: Option<f64>,
}

impl PersistenceDiagram {
    /// Builds a diagram from arbitrary points. At most one point may have an
    /// infinite death; finite points need `birth <= death`.
    pub fn from_points<I: IntoIterator<Item = Point>>(points: I) -> Result<Self> {
        let mut finite = Vec::new();
        let mut infinite_birth = None;
        for p in points {
            if !p.birth.is_finite() || p.death.is_nan() || p.death == f64::NEG_INFINITY {
                return Err(Error::DomainError(format!(
                    "invalid diagram point ({}, {})",
                    p.birth, p.death
                )));
            }
            if p.death.is_infinite() {
                if infinite_birth.replace(p.birth).is_some() {
                    return Err(Error::DomainError(
                        "more than one infinite point".to_string(),
                    ));
                }
            } else if p.death < p.birth {
                return Err(Error::DomainError(format!(
                    "death {} precedes birth {}",
                    p.death, p.birth
                )));
            } else {
                finite.push(p);
            }
        }
        finite.sort_unstable_by(Point::cmp_key);
        Ok(Self {
            finite,
            infinite_birth,
        })
    }

    pub fn finite_points(&self) -> &[Point] {
        &self.finite
    }

    pub fn infinite_point(&self) -> Option<Point> {
        self.infinite_birth.map(|b| Point::new(b, f64::INFINITY))
    }

    /// All points sorted by `(birth, death)`.
    pub fn points(&self) -> Vec<Point> {
        let mut all = self.finite.clone();
        all.extend(self.infinite_point());
        all.sort_by(Point::cmp_key);
        all
    }

    /// `xi(Delta)`: total number of points.
    pub fn len(&self) -> usize {
        self.finite.len() + usize::from(self.infinite_birth.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of points of the restricted measure (finite deaths only).
    pub fn finite_len(&self) -> usize {
        self.finite.len()
    }

    /// Finite lifetimes `d - b`, in point order.
    pub fn finite_lifetimes(&self) -> impl Iterator<Item = f64> + '_ {
        self.finite.iter().map(Point::lifetime)
    }

    /// CSV with header `birth,death`, sorted by `(birth, death)`, `inf` for the
    /// infinite death. Floats use the shortest round-tripping representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("birth,death\n");
        for p in self.points() {
            if p.death.is_infinite() {
                let _ = writeln!(out, "{},inf", p.birth);
            } else {
                let _ = writeln!(out, "{},{}", p.birth, p.death);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "birth,death" => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header `birth,death`, found {other:?}"
                )))
            }
        }
        let mut points = Vec::new();
        for (row, line) in lines.enumerate() {
            let (b, d) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("row {}: expected two fields", row + 1)))?;
            let birth: f64 = b
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad birth {b:?}", row + 1)))?;
            let death = match d.trim() {
                "inf" => f64::INFINITY,
                other => other
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad death {other:?}", row + 1)))?,
            };
            points.push(Point::new(birth, death));
        }
        Self::from_points(points)
    }
}

/// A half-open rectangle `(s1, s2] x (t1, t2]` above the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RectangleRepr", into = "RectangleRepr")]
pub struct Rectangle {
    s1: f64,
    s2: f64,
    t1: f64,
    t2: f64,
}

impl Rectangle {
    /// Requires `s1 <= s2 <= t1 <= t2`, `s2 < +inf`, no NaN. `s1 = -inf` is
    /// accepted and gives the corner sets `(-inf, s] x (t1, t2]`.
    pub fn new(s1: f64, s2: f64, t1: f64, t2: f64) -> Result<Self> {
        let ok = ![s1, s2, t1, t2].iter().any(|v| v.is_nan())
            && s1 <= s2
            && s2 <= t1
            && t1 <= t2
            && s2 < f64::INFINITY
            && t2 > f64::NEG_INFINITY;
        if ok {
            Ok(Self { s1, s2, t1, t2 })
        } else {
            Err(Error::InvalidRectangle { s1, s2, t1, t2 })
        }
    }

    /// The corner set `(-inf, s] x (t, +inf]`.
    pub fn corner(s: f64, t: f64) -> Result<Self> {
        Self::new(f64::NEG_INFINITY, s, t, f64::INFINITY)
    }

    pub fn coords(&self) -> (f64, f64, f64, f64) {
        (self.s1, self.s2, self.t1, self.t2)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.s1 < p.birth && p.birth <= self.s2 && self.t1 < p.death && p.death <= self.t2
    }

    pub fn is_degenerate(&self) -> bool {
        self.s1 == self.s2 || self.t1 == self.t2
    }
}

#[derive(Serialize, Deserialize)]
struct RectangleRepr {
    #[serde(with = "crate::ext_float")]
    s1: f64,
    #[serde(with = "crate::ext_float")]
    s2: f64,
    #[serde(with = "crate::ext_float")]
    t1: f64,
    #[serde(with = "crate::ext_float")]
    t2: f64,
}

impl TryFrom<RectangleRepr> for Rectangle {
    type Error = Error;
    fn try_from(r: RectangleRepr) -> Result<Self> {
        Rectangle::new(r.s1, r.s2, r.t1, r.t2)
    }
}

impl From<Rectangle> for RectangleRepr {
    fn from(r: Rectangle) -> Self {
        RectangleRepr {
            s1: r.s1,
            s2: r.s2,
            t1: r.t1,
            t2: r.t2,
        }
    }
}

/// One application of the elder rule: at `level_pos` the component born at
/// `absorbed` merges into the older component born at `survivor`.
/// Positions are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    pub survivor: usize,
    pub absorbed: usize,
    pub level_pos: usize,
}

struct Components {
    parent: Vec<usize>,
    size: Vec<u32>,
    /// Position of the minimum of the component rooted here.
    birth: Vec<usize>,
}

impl Components {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            birth: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize, birth: usize) -> usize {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.birth[big] = birth;
        big
    }
}

/// Runs the sublevel sweep and reports every merge in filtration order.
pub fn elder_merges(series: &TimeSeries) -> Vec<Merge> {
    let n = series.len();
    let mut comps = Components::new(n);
    let mut active = vec![false; n];
    let mut merges = Vec::new();
    for v in series.filtration_order() {
        active[v] = true;
        let left = (v > 0 && active[v - 1]).then(|| comps.find(v - 1));
        let right = (v + 1 < n && active[v + 1]).then(|| comps.find(v + 1));
        match (left, right) {
            (None, None) => {}
            (Some(r), None) | (None, Some(r)) => {
                let b = comps.birth[r];
                comps.union(r, v, b);
            }
            (Some(a), Some(b)) => {
                let (ba, bb) = (comps.birth[a], comps.birth[b]);
                let (elder, younger) = if series.cmp_positions(ba, bb) == Ordering::Less {
                    (ba, bb)
                } else {
                    (bb, ba)
                };
                merges.push(Merge {
                    survivor: elder,
                    absorbed: younger,
                    level_pos: v,
                });
                let root = comps.union(a, b, elder);
                comps.union(root, v, elder);
            }
        }
    }
    merges
}

/// The persistence diagram of the sublevel filtration of `series`.
///
/// Each strict local minimum (in the tie-broken order) starts a component; when
/// two components meet, the one with the larger birth dies at the level of the
/// connecting edge. The global minimum never dies.
///
/// Under [`TiePolicy::PerturbByIndex`] a merge can happen at a level equal to the
/// younger birth value, which yields a zero-lifetime point. Such points are kept
/// so that the point count always equals the number of local minima; they have
/// zero mass on every rectangle above the diagonal.
pub fn compute_diagram(series: &TimeSeries) -> PersistenceDiagram {
    let x = series.values();
    let merges = elder_merges(series);
    let mut finite: Vec<Point> = merges
        .iter()
        .map(|m| Point::new(x[m.absorbed], x[m.level_pos]))
        .collect();
    finite.sort_unstable_by(Point::cmp_key);
    let argmin = (0..x.len())
        .min_by(|&a, &b| series.cmp_positions(a, b))
        .expect("series is non-empty");
    PersistenceDiagram {
        finite,
        infinite_birth: Some(x[argmin]),
    }
}

/// Number of strict local minima of the padded series.
pub fn count_local_minima(series: &TimeSeries) -> usize {
    let n = series.len();
    (0..n)
        .filter(|&i| {
            let below_left = i == 0 || series.cmp_positions(i, i - 1) == Ordering::Less;
            let below_right = i + 1 == n || series.cmp_positions(i, i + 1) == Ordering::Less;
            below_left && below_right
        })
        .count()
}

/// `xi(R)`: number of diagram points in the rectangle.
pub fn rectangle_count(diagram: &PersistenceDiagram, r: &Rectangle) -> usize {
    let in_finite = diagram.finite.iter().filter(|p| r.contains(p)).count();
    let in_infinite = diagram.infinite_point().map_or(0, |p| usize::from(r.contains(&p)));
    in_finite + in_infinite
}

/// Persistent Betti number: points born at or before `s` that are still alive
/// after `t`. For `t = +inf` this is `1{min <= s}`.
pub fn betti(diagram: &PersistenceDiagram, s: f64, t: f64) -> Result<usize> {
    if s.is_nan() || t.is_nan() || s > t {
        return Err(Error::InvalidThresholds { s, t });
    }
    if t == f64::INFINITY {
        return Ok(diagram.infinite_birth.map_or(0, |b| usize::from(b <= s)));
    }
    let finite = diagram
        .finite
        .iter()
        .filter(|p| p.birth <= s && p.death > t)
        .count();
    let infinite = diagram.infinite_birth.map_or(0, |b| usize::from(b <= s));
    Ok(finite + infinite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::strict(v.to_vec()).unwrap()
    }

    fn pts(d: &PersistenceDiagram) -> Vec<(f64, f64)> {
        d.points().iter().map(|p| (p.birth, p.death)).collect()
    }

    const INF: f64 = f64::INFINITY;

    #[test]
    fn worked_diagrams() {
        assert_eq!(pts(&compute_diagram(&ts(&[3.0, 1.0, 2.0]))), vec![(1.0, INF)]);
        assert_eq!(
            pts(&compute_diagram(&ts(&[1.0, 3.0, 2.0, 4.0]))),
            vec![(1.0, INF), (2.0, 3.0)]
        );
        assert_eq!(pts(&compute_diagram(&ts(&[5.0]))), vec![(5.0, INF)]);
    }

    #[test]
    fn local_minima_examples() {
        assert_eq!(count_local_minima(&ts(&[1.0, 3.0, 2.0, 4.0])), 2);
        assert_eq!(count_local_minima(&ts(&[5.0])), 1);
        assert_eq!(count_local_minima(&ts(&[1.0, 2.0, 3.0, 4.0, 5.0])), 1);
    }

    #[test]
    fn series_validation() {
        assert_eq!(TimeSeries::strict(vec![]), Err(Error::EmptySeries));
        assert!(matches!(
            TimeSeries::strict(vec![1.0, f64::NAN]),
            Err(Error::NonFiniteInput { index: 1, .. })
        ));
        assert!(matches!(
            TimeSeries::strict(vec![0.0, INF]),
            Err(Error::NonFiniteInput { index: 1, .. })
        ));
        assert!(matches!(
            TimeSeries::strict(vec![1.0, 2.0, 2.0]),
            Err(Error::ConsecutiveTie { index: 1, .. })
        ));
        // Non-adjacent repeats are fine under the strict policy.
        assert!(TimeSeries::strict(vec![1.0, 2.0, 1.0]).is_ok());
        assert!(TimeSeries::new(vec![2.0, 2.0], TiePolicy::PerturbByIndex).is_ok());
    }

    #[test]
    fn perturbed_ties_use_index_order() {
        let s = TimeSeries::new(vec![1.0, 1.0, 0.0], TiePolicy::PerturbByIndex).unwrap();
        let d = compute_diagram(&s);
        // The earlier 1.0 is a local minimum; it dies when the later 1.0 links it
        // to the component born at 0.
        assert_eq!(pts(&d), vec![(0.0, INF), (1.0, 1.0)]);
        assert_eq!(d.len(), count_local_minima(&s));
        let flat = TimeSeries::new(vec![2.0; 6], TiePolicy::PerturbByIndex).unwrap();
        assert_eq!(pts(&compute_diagram(&flat)), vec![(2.0, INF)]);
    }

    #[test]
    fn rectangle_examples() {
        let d = compute_diagram(&ts(&[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(rectangle_count(&d, &Rectangle::new(0.0, 2.0, 2.0, INF).unwrap()), 2);
        assert_eq!(rectangle_count(&d, &Rectangle::new(0.0, 1.0, 4.0, 5.0).unwrap()), 0);
        assert_eq!(rectangle_count(&d, &Rectangle::new(1.5, 1.5, 2.0, INF).unwrap()), 0);
        assert!(Rectangle::new(0.0, 3.0, 2.0, 4.0).is_err());
        assert!(Rectangle::new(1.0, 0.0, 2.0, 4.0).is_err());
        assert!(Rectangle::new(0.0, 1.0, 2.0, f64::NAN).is_err());
    }

    #[test]
    fn betti_examples() {
        let d = compute_diagram(&ts(&[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(betti(&d, 2.0, 2.5).unwrap(), 2);
        assert_eq!(betti(&d, 0.0, 0.5).unwrap(), 0);
        assert_eq!(betti(&d, 1.0, INF).unwrap(), 1);
        assert_eq!(betti(&d, 0.5, INF).unwrap(), 0);
        assert!(betti(&d, 3.0, 2.0).is_err());
    }

    #[test]
    fn csv_format_and_roundtrip() {
        let d = compute_diagram(&ts(&[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(d.to_csv(), "birth,death\n1,inf\n2,3\n");
        assert_eq!(PersistenceDiagram::from_csv(&d.to_csv()).unwrap(), d);
        assert!(PersistenceDiagram::from_csv("b,d\n1,2\n").is_err());
        assert!(PersistenceDiagram::from_csv("birth,death\n1,x\n").is_err());
    }

    #[test]
    fn merges_respect_elder_rule() {
        let s = ts(&[0.3, 2.0, 0.1, 1.5, 0.7, 3.0, 0.2]);
        for m in elder_merges(&s) {
            let x = s.values();
            assert!(x[m.survivor] < x[m.absorbed]);
            assert!(x[m.absorbed] < x[m.level_pos]);
        }
    }

    fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1000i32..1000, 1..120)
            .prop_map(|v| v.into_iter().map(|k| k as f64 / 7.0).collect())
    }

    proptest! {
        #[test]
        fn point_count_equals_local_minima(v in series_strategy()) {
            let s = TimeSeries::new(v, TiePolicy::PerturbByIndex).unwrap();
            let d = compute_diagram(&s);
            prop_assert_eq!(d.len(), count_local_minima(&s));
            let min = s.values().iter().cloned().fold(INF, f64::min);
            prop_assert_eq!(d.infinite_point().unwrap().birth, min);
            for p in d.finite_points() {
                prop_assert!(p.birth <= p.death && p.death.is_finite());
            }
        }

        #[test]
        fn sorted_series_has_one_point(mut v in series_strategy()) {
            v.sort_by(f64::total_cmp);
            let s = TimeSeries::new(v, TiePolicy::PerturbByIndex).unwrap();
            prop_assert_eq!(compute_diagram(&s).len(), 1);
        }

        #[test]
        fn rectangle_count_is_additive(v in series_strategy(), cuts in prop::collection::vec(-150.0f64..150.0, 5)) {
            let s = TimeSeries::new(v, TiePolicy::PerturbByIndex).unwrap();
            let d = compute_diagram(&s);
            let mut c = cuts.clone();
            c.sort_by(f64::total_cmp);
            let (s1, sm, s2, t1, t2) = (c[0], c[1], c[2], c[3], c[4]);
            let whole = rectangle_count(&d, &Rectangle::new(s1, s2, t1, t2).unwrap());
            let left = rectangle_count(&d, &Rectangle::new(s1, sm, t1, t2).unwrap());
            let right = rectangle_count(&d, &Rectangle::new(sm, s2, t1, t2).unwrap());
            prop_assert_eq!(whole, left + right);
            let tm = (t1 + t2) / 2.0;
            let low = rectangle_count(&d, &Rectangle::new(s1, s2, t1, tm).unwrap());
            let high = rectangle_count(&d, &Rectangle::new(s1, s2, tm, t2).unwrap());
            prop_assert_eq!(whole, low + high);
        }

        #[test]
        fn rectangle_count_matches_betti_inclusion_exclusion(v in series_strategy(), cuts in prop::collection::vec(-150.0f64..150.0, 4)) {
            let s = TimeSeries::new(v, TiePolicy::PerturbByIndex).unwrap();
            let d = compute_diagram(&s);
            let mut c = cuts.clone();
            c.sort_by(f64::total_cmp);
            let r = Rectangle::new(c[0], c[1], c[2], c[3]).unwrap();
            let b = |s: f64, t: f64| betti(&d, s, t).unwrap() as i64;
            let ie = b(c[1], c[2]) - b(c[1], c[3]) - b(c[0], c[2]) + b(c[0], c[3]);
            prop_assert_eq!(rectangle_count(&d, &r) as i64, ie);
        }
    }
}
