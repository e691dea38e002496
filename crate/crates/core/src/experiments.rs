//! Monte Carlo checks of the limit theorems for the diagram measure.
//!
//! Each replication draws one path of the largest length in `n_grid` from its
//! own random stream and evaluates every smaller `n` on a prefix of that path.
//! Results are aggregated in replication order with compensated sums, so a
//! report depends only on the config.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagram::{compute_diagram, rectangle_count, PersistenceDiagram, Rectangle, TiePolicy, TimeSeries};
use crate::error::{Error, Result};
use crate::exec::{compensated_sum, Execution};
use crate::ks::{self, Estimate};
use crate::measures::{alps, integrate_step, lifetime_ecdf_sup_distance, persistent_entropy, StepFunction};
use crate::null::{self, Marginal};
use crate::oracle::{rectangle_count_bruteforce, y_term};
use crate::process::{ProcessSpec, Verdict};
use crate::rng::{stream_id, stream_rng};

const PHASE_REPS: u32 = 1;
const PHASE_MEGA: u32 = 2;
const PHASE_ORACLE: u32 = 3;
const PHASE_PATHS: u32 = 4;

/// Largest `n` checked against the brute-force oracle.
pub const ORACLE_MAX_N: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SllnRectangles,
    Glivenko,
    UnboundedFunctional,
    Clt,
    Covariance,
}

/// How threshold coordinates in `targets` are read: as values, or as levels
/// `p` of the stationary marginal, mapped to `F^{-1}(p)` with `0 -> -inf`
/// and `1 -> +inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    #[default]
    Value,
    Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionalTarget {
    PowerP { p: f64 },
    Xlogx,
}

impl FunctionalTarget {
    fn label(&self) -> String {
        match self {
            FunctionalTarget::PowerP { p } => format!("mean_lifetime_pow_{p}"),
            FunctionalTarget::Xlogx => "mean_lifetime_xlogx".into(),
        }
    }

    fn eval(&self, l: f64) -> f64 {
        match *self {
            FunctionalTarget::PowerP { p } => l.powf(p),
            FunctionalTarget::Xlogx => {
                if l == 0.0 {
                    0.0
                } else {
                    l * l.ln()
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FunctionalTarget::PowerP { p } if !(p > 0.0 && p.is_finite()) => {
                Err(Error::InvalidConfig(format!("power p = {p} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Threshold pairs `(s1, t1)`, `(s2, t2)` for covariance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    #[serde(with = "crate::ext_float")]
    pub s1: f64,
    #[serde(with = "crate::ext_float")]
    pub t1: f64,
    #[serde(with = "crate::ext_float")]
    pub s2: f64,
    #[serde(with = "crate::ext_float")]
    pub t2: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    #[serde(default)]
    pub rectangles: Vec<Rectangle>,
    #[serde(default)]
    pub step_functions: Vec<StepFunction>,
    #[serde(default)]
    pub functionals: Vec<FunctionalTarget>,
    /// Track `E_n - log #finite points`.
    #[serde(default)]
    pub entropy: bool,
    /// Track `L log #points - A^L_n` at this `L`.
    #[serde(default)]
    pub alps_truncation: Option<f64>,
    #[serde(default)]
    pub pairs: Vec<ThresholdPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Monte Carlo agreement band in standard errors.
    #[serde(default = "defaults::se_multiplier")]
    pub se_multiplier: f64,
    /// Final lifetime-tail sup-distance.
    #[serde(default = "defaults::sup_distance")]
    pub sup_distance: f64,
    /// Absolute change between the two largest `n`.
    #[serde(default = "defaults::cauchy_abs")]
    pub cauchy_abs: f64,
    /// Relative change of variance estimates between the two largest `n`.
    #[serde(default = "defaults::cauchy_rel")]
    pub cauchy_rel: f64,
    /// Distance from the mega-run reference.
    #[serde(default = "defaults::mega_run_abs")]
    pub mega_run_abs: f64,
    /// KS significance level.
    #[serde(default = "defaults::ks_alpha")]
    pub ks_alpha: f64,
    /// Minimum replications for a normality verdict.
    #[serde(default = "defaults::min_clt_reps")]
    pub min_clt_reps: usize,
    /// Relative change of the covariance series between successive `K`.
    #[serde(default = "defaults::k_stability_rel")]
    pub k_stability_rel: f64,
    /// Smallest `K` from which the series must be stable.
    #[serde(default = "defaults::k_stable_from")]
    pub k_stable_from: usize,
    /// Fraction of replications checked against the brute-force oracle.
    #[serde(default = "defaults::oracle_fraction")]
    pub oracle_fraction: f64,
}

mod defaults {
    pub fn se_multiplier() -> f64 {
        3.0
    }
    pub fn sup_distance() -> f64 {
        0.02
    }
    pub fn cauchy_abs() -> f64 {
        0.01
    }
    pub fn cauchy_rel() -> f64 {
        0.10
    }
    pub fn mega_run_abs() -> f64 {
        0.01
    }
    pub fn ks_alpha() -> f64 {
        0.01
    }
    pub fn min_clt_reps() -> usize {
        1000
    }
    pub fn k_stability_rel() -> f64 {
        0.05
    }
    pub fn k_stable_from() -> usize {
        5
    }
    pub fn oracle_fraction() -> f64 {
        0.01
    }
    pub fn max_k() -> usize {
        10
    }
    pub fn path_length() -> usize {
        20_000
    }
    pub fn margin() -> usize {
        200
    }
    pub fn mega_factor() -> usize {
        10
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Settings of the Y-series covariance estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSettings {
    /// Largest lag `K` of the truncated series.
    #[serde(default = "defaults::max_k")]
    pub max_k: usize,
    /// Length of each long path.
    #[serde(default = "defaults::path_length")]
    pub path_length: usize,
    /// Positions this close to the path end are dropped, so runs cut off by
    /// the end of the path do not bias `Y^inf`.
    #[serde(default = "defaults::margin")]
    pub margin: usize,
    /// Number of long paths; defaults to `reps`.
    #[serde(default)]
    pub paths: Option<usize>,
}

impl Default for CovarianceSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub process: ProcessSpec,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub coordinates: Coordinates,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub covariance: CovarianceSettings,
    /// Replaces `process.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub execution: Execution,
    /// Length of the mega-run reference as a multiple of the largest `n`.
    #[serde(default = "defaults::mega_factor")]
    pub mega_factor: usize,
    /// Wall-clock times make reports differ between runs, so they are opt-in.
    #[serde(default)]
    pub record_runtimes: bool,
    /// Per-replication values are written here as CSV when set.
    #[serde(default)]
    pub raw_csv: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn process_spec(&self) -> ProcessSpec {
        let mut spec = self.process.clone();
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.reps < 2 {
            return bad(format!("reps must be >= 2, got {}", self.reps));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return bad("n_grid must be non-empty with positive lengths".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing".into());
        }
        if self.mega_factor == 0 {
            return bad("mega_factor must be >= 1".into());
        }
        self.process.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for f in &self.targets.functionals {
            f.validate()?;
        }
        if let Some(l) = self.targets.alps_truncation {
            if !(l > 0.0) {
                return bad(format!("alps_truncation must be positive, got {l}"));
            }
        }
        let t = &self.tolerances;
        if !(t.ks_alpha > 0.0 && t.ks_alpha < 1.0) || !(t.oracle_fraction >= 0.0 && t.oracle_fraction <= 1.0) {
            return bad("ks_alpha must be in (0, 1) and oracle_fraction in [0, 1]".into());
        }
        match self.experiment {
            ExperimentKind::SllnRectangles if self.targets.rectangles.is_empty() => {
                bad("slln_rectangles needs at least one rectangle".into())
            }
            ExperimentKind::Clt if self.targets.step_functions.is_empty() => {
                bad("clt needs at least one step function".into())
            }
            ExperimentKind::Clt if self.reps < t.min_clt_reps => bad(format!(
                "clt needs reps >= {} for a normality verdict, got {}",
                t.min_clt_reps, self.reps
            )),
            ExperimentKind::Covariance if self.targets.pairs.is_empty() => {
                bad("covariance needs at least one threshold pair".into())
            }
            ExperimentKind::Covariance
                if self.covariance.path_length <= 2 * self.covariance.margin + self.covariance.max_k + 2 =>
            {
                bad("covariance path_length too short for margin and max_k".into())
            }
            ExperimentKind::UnboundedFunctional
                if self.targets.functionals.is_empty()
                    && !self.targets.entropy
                    && self.targets.alps_truncation.is_none() =>
            {
                bad("unbounded_functional needs functionals, entropy or alps_truncation".into())
            }
            _ => Ok(()),
        }
    }

    fn level(&self, spec: &ProcessSpec, x: f64) -> Result<f64> {
        match self.coordinates {
            Coordinates::Value => Ok(x),
            Coordinates::Level => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::InvalidConfig(format!("level {x} outside [0, 1]")));
                }
                spec.stationary_level(x)
            }
        }
    }

    fn resolve_rect(&self, spec: &ProcessSpec, r: &Rectangle) -> Result<Rectangle> {
        let (s1, s2, t1, t2) = r.coords();
        Rectangle::new(self.level(spec, s1)?, self.level(spec, s2)?, self.level(spec, t1)?, self.level(spec, t2)?)
    }

    fn resolve_step(&self, spec: &ProcessSpec, f: &StepFunction) -> Result<StepFunction> {
        let terms = f
            .terms
            .iter()
            .map(|term| Ok((term.weight, self.resolve_rect(spec, &term.rect)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepFunction::new(terms))
    }

    fn resolve_pair(&self, spec: &ProcessSpec, p: &ThresholdPair) -> Result<ThresholdPair> {
        let out = ThresholdPair {
            s1: self.level(spec, p.s1)?,
            t1: self.level(spec, p.t1)?,
            s2: self.level(spec, p.s2)?,
            t2: self.level(spec, p.t2)?,
        };
        if !(out.s1 <= out.t1 && out.s2 <= out.t2) {
            return Err(Error::InvalidThresholds { s: out.s1.max(out.s2), t: out.t1.min(out.t2) });
        }
        Ok(out)
    }
}

/// One pass/fail decision and the tolerance it was made against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub value: f64,
    pub threshold: f64,
    /// Name of the field in `tolerances` the threshold derives from.
    pub tolerance: String,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64, tolerance: &str) -> Self {
        Check {
            name: name.into(),
            verdict: Verdict::from_bool(value <= threshold),
            value,
            threshold,
            tolerance: tolerance.into(),
        }
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64, tolerance: &str) -> Self {
        Check {
            name: name.into(),
            verdict: Verdict::from_bool(value > threshold),
            value,
            threshold,
            tolerance: tolerance.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub target: String,
    /// Closed-form limit when one is known.
    pub theory: Option<f64>,
    /// Single long-run reference.
    pub mega_run: Option<f64>,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("n_grid is non-empty")
    }

    fn last_change(&self) -> Option<f64> {
        let k = self.points.len();
        (k >= 2).then(|| (self.points[k - 1].mean - self.points[k - 2].mean).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub replications: usize,
    pub comparisons: usize,
    pub mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlivenkoPoint {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub first_replication: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltPoint {
    pub n: usize,
    pub mean: f64,
    /// Exact `E xi(f)` for i.i.d. processes.
    pub exact_mean: Option<f64>,
    /// `Var(xi(f)) / n`, the estimate of the limiting variance.
    pub variance_over_n: f64,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltTarget {
    pub target: usize,
    pub points: Vec<CltPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub k: usize,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceResult {
    pub pair: ThresholdPair,
    pub n: usize,
    /// `Cov(beta^{s1,t1}, beta^{s2,t2}) / n` across replications.
    pub empirical: Estimate,
    /// Truncated Y-series for `K = 0..=max_k`.
    pub series: Vec<SeriesPoint>,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportBody {
    SllnRectangles {
        mass_rate: Trajectory,
        rectangles: Vec<Trajectory>,
        oracle: OracleCheck,
    },
    Glivenko {
        reference: String,
        points: Vec<GlivenkoPoint>,
    },
    UnboundedFunctional {
        targets: Vec<Trajectory>,
    },
    Clt {
        targets: Vec<CltTarget>,
    },
    Covariance {
        path_length: usize,
        margin: usize,
        paths: usize,
        pairs: Vec<CovarianceResult>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub process: ProcessSpec,
    pub reps: usize,
    pub n_grid: Vec<usize>,
    pub tolerances: Tolerances,
    pub body: ReportBody,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub runtime_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.verdict != Verdict::Pass)
    }
}

/// Per-replication values: `raw[rep][n_index][target]`.
type Raw = Vec<Vec<Vec<f64>>>;

fn path_for(spec: &ProcessSpec, phase: u32, rep: usize, n: usize) -> Result<Vec<f64>> {
    let mut rng = stream_rng(spec.seed, stream_id(phase, rep as u32));
    spec.sample_values(n, &mut rng)
}

fn prefix_series(path: &[f64], n: usize) -> Result<TimeSeries> {
    TimeSeries::new(path[..n].to_vec(), TiePolicy::PerturbByIndex)
}

/// Runs `stat` on the diagram of each prefix of each replication's path.
fn replicate<F>(cfg: &ExperimentConfig, spec: &ProcessSpec, stat: F) -> Result<Raw>
where
    F: Fn(usize, &TimeSeries, &PersistenceDiagram) -> Result<Vec<f64>> + Sync + Send,
{
    let n_max = *cfg.n_grid.last().expect("validated");
    let results = cfg.execution.map(cfg.reps, |rep| -> Result<Vec<Vec<f64>>> {
        let path = path_for(spec, PHASE_REPS, rep, n_max)?;
        cfg.n_grid
            .iter()
            .map(|&n| {
                let series = prefix_series(&path, n)?;
                let diagram = compute_diagram(&series);
                stat(rep, &series, &diagram)
            })
            .collect()
    });
    results.into_iter().collect()
}

fn column(raw: &Raw, n_index: usize, target: usize) -> Vec<f64> {
    raw.iter().map(|rep| rep[n_index][target]).collect()
}

fn trajectory(cfg: &ExperimentConfig, raw: &Raw, target: usize, label: String, theory: Option<f64>) -> Trajectory {
    let points = cfg
        .n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let e = ks::estimate(&column(raw, k, target));
            TrajectoryPoint { n, mean: e.mean, std_error: e.std_error }
        })
        .collect();
    Trajectory { target: label, theory, mega_run: None, points }
}

fn write_raw(cfg: &ExperimentConfig, labels: &[String], raw: &Raw) -> Result<()> {
    let Some(path) = &cfg.raw_csv else {
        return Ok(());
    };
    let mut out = String::from("rep,n,target,value\n");
    for (rep, per_n) in raw.iter().enumerate() {
        for (k, values) in per_n.iter().enumerate() {
            for (j, v) in values.iter().enumerate() {
                let _ = writeln!(out, "{rep},{},{},{v}", cfg.n_grid[k], labels[j]);
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::InvalidConfig(format!("cannot write {path}: {e}")))
}

fn finish(cfg: &ExperimentConfig, spec: ProcessSpec, body: ReportBody, checks: Vec<Check>, started: Instant) -> ExperimentReport {
    let pass = checks.iter().all(|c| c.verdict == Verdict::Pass);
    ExperimentReport {
        experiment: cfg.experiment,
        process: spec,
        reps: cfg.reps,
        n_grid: cfg.n_grid.clone(),
        tolerances: cfg.tolerances.clone(),
        body,
        checks,
        pass,
        runtime_seconds: cfg.record_runtimes.then(|| started.elapsed().as_secs_f64()),
    }
}

/// Replications selected for the oracle cross-check: each with probability
/// `fraction`, and always the first one.
fn oracle_sample(spec: &ProcessSpec, reps: usize, fraction: f64) -> Vec<bool> {
    let mut rng = stream_rng(spec.seed, stream_id(PHASE_ORACLE, 0));
    (0..reps).map(|rep| rep == 0 || rng.random::<f64>() < fraction).collect()
}

/// Law of large numbers on rectangles: `xi(R) / xi(Delta)` and
/// `xi(Delta) / n` along `n_grid`.
pub fn run_slln_rectangles(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = cfg.process_spec();
    let rects: Vec<Rectangle> =
        cfg.targets.rectangles.iter().map(|r| cfg.resolve_rect(&spec, r)).collect::<Result<_>>()?;
    let selected = oracle_sample(&spec, cfg.reps, cfg.tolerances.oracle_fraction);

    let raw = replicate(cfg, &spec, |_, series, d| {
        let total = d.len() as f64;
        let mut row = vec![total / series.len() as f64];
        row.extend(rects.iter().map(|r| rectangle_count(d, r) as f64 / total));
        Ok(row)
    })?;

    // Oracle cross-check on prefixes of at most ORACLE_MAX_N points.
    let n_max = *cfg.n_grid.last().expect("validated");
    let mut oracle_lengths: Vec<usize> = cfg.n_grid.iter().copied().filter(|&n| n <= ORACLE_MAX_N).collect();
    if oracle_lengths.is_empty() {
        oracle_lengths.push(ORACLE_MAX_N.min(n_max));
    }
    let oracle_counts = cfg.execution.map(cfg.reps, |rep| -> Result<(usize, usize)> {
        if !selected[rep] {
            return Ok((0, 0));
        }
        let path = path_for(&spec, PHASE_REPS, rep, n_max)?;
        let (mut comparisons, mut mismatches) = (0, 0);
        for &n in &oracle_lengths {
            let series = prefix_series(&path, n)?;
            let d = compute_diagram(&series);
            for r in &rects {
                comparisons += 1;
                if rectangle_count(&d, r) as i64 != rectangle_count_bruteforce(&series, r)? {
                    mismatches += 1;
                }
            }
        }
        Ok((comparisons, mismatches))
    });
    let mut oracle = OracleCheck { replications: selected.iter().filter(|&&s| s).count(), comparisons: 0, mismatches: 0 };
    for r in oracle_counts {
        let (c, m) = r?;
        oracle.comparisons += c;
        oracle.mismatches += m;
    }

    let iid = spec.iid_marginal();
    let mass_rate = trajectory(cfg, &raw, 0, "diagram_mass_per_n".into(), iid.map(|_| 1.0 / 3.0));
    let mut rectangles = Vec::with_capacity(rects.len());
    for (j, r) in rects.iter().enumerate() {
        let theory = iid.map(|m| null::null_rectangle_mass(m, r)).transpose()?;
        rectangles.push(trajectory(cfg, &raw, j + 1, format!("rectangle_{j}"), theory));
    }

    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    for traj in std::iter::once(&mass_rate).chain(&rectangles) {
        let last = traj.last();
        if let Some(theory) = traj.theory {
            checks.push(Check::at_most(
                format!("{}: |mean - limit| at n = {}", traj.target, last.n),
                (last.mean - theory).abs(),
                tol.se_multiplier * last.std_error,
                "se_multiplier",
            ));
        } else if let Some(change) = traj.last_change() {
            checks.push(Check::at_most(
                format!("{}: change between the two largest n", traj.target),
                change,
                tol.cauchy_abs,
                "cauchy_abs",
            ));
        }
    }
    checks.push(Check::at_most(
        "oracle mismatches",
        oracle.mismatches as f64,
        0.0,
        "oracle_fraction",
    ));

    let mut labels = vec!["diagram_mass_per_n".to_string()];
    labels.extend((0..rects.len()).map(|j| format!("rectangle_{j}")));
    write_raw(cfg, &labels, &raw)?;
    Ok(finish(cfg, spec, ReportBody::SllnRectangles { mass_rate, rectangles, oracle }, checks, started))
}

/// Reference lifetime tail for the Glivenko-Cantelli check.
enum TailReference {
    Uniform,
    Table { step: f64, values: Vec<f64> },
    Empirical { sorted: Vec<f64>, total: usize },
}

impl TailReference {
    fn eval(&self, l: f64) -> f64 {
        match self {
            TailReference::Uniform => (1.0 - l).clamp(0.0, 1.0),
            TailReference::Table { step, values } => {
                let x = l / step;
                let k = x.floor() as usize;
                if k + 1 >= values.len() {
                    return *values.last().unwrap();
                }
                let w = x - k as f64;
                values[k] * (1.0 - w) + values[k + 1] * w
            }
            TailReference::Empirical { sorted, total } => {
                let alive = sorted.len() - sorted.partition_point(|&x| x <= l);
                alive as f64 / *total as f64
            }
        }
    }
}

fn tail_table(m: &Marginal) -> Result<TailReference> {
    let hi = m.level(1.0 - 1e-12)? - m.level(1e-12)?;
    let k = 4096;
    let step = hi / k as f64;
    let values = (0..=k).map(|j| null::null_lifetime_tail(m, j as f64 * step)).collect::<Result<_>>()?;
    Ok(TailReference::Table { step, values })
}

/// Glivenko-Cantelli: sup-distance between the empirical lifetime tail and
/// the limiting one along `n_grid`.
pub fn run_glivenko(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = cfg.process_spec();
    let (reference, label) = match spec.iid_marginal() {
        Some(Marginal::Uniform01) => (TailReference::Uniform, "closed_form"),
        Some(m) => (tail_table(m)?, "closed_form_table"),
        None => {
            let n = cfg.n_grid.last().unwrap() * cfg.mega_factor;
            let path = path_for(&spec, PHASE_MEGA, 0, n)?;
            let d = compute_diagram(&TimeSeries::new(path, TiePolicy::PerturbByIndex)?);
            let mut sorted: Vec<f64> = d.finite_lifetimes().collect();
            sorted.sort_by(f64::total_cmp);
            (TailReference::Empirical { sorted, total: d.len() }, "mega_run")
        }
    };
    let raw = replicate(cfg, &spec, |_, _, d| Ok(vec![lifetime_ecdf_sup_distance(d, |l| reference.eval(l))?]))?;
    let points: Vec<GlivenkoPoint> = cfg
        .n_grid
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let col = column(&raw, k, 0);
            GlivenkoPoint { n, median: ks::median(&col), mean: ks::mean(&col), first_replication: col[0] }
        })
        .collect();

    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    for w in points.windows(2) {
        checks.push(Check::at_most(
            format!("median sup-distance decreases from n = {} to n = {}", w[0].n, w[1].n),
            w[1].median,
            w[0].median,
            "sup_distance",
        ));
    }
    let last = points.last().unwrap();
    checks.push(Check::at_most(
        format!("median sup-distance at n = {}", last.n),
        last.median,
        tol.sup_distance,
        "sup_distance",
    ));
    write_raw(cfg, &["sup_distance".to_string()], &raw)?;
    Ok(finish(cfg, spec, ReportBody::Glivenko { reference: label.into(), points }, checks, started))
}

/// Values tracked by the unbounded-functional experiment, in order:
/// functionals, then the entropy offset, then the ALPS offset.
fn functional_values(cfg: &ExperimentConfig, d: &PersistenceDiagram) -> Result<Vec<f64>> {
    let finite = d.finite_len();
    if finite == 0 {
        return Err(Error::NoFinitePoints);
    }
    let mut row: Vec<f64> = cfg
        .targets
        .functionals
        .iter()
        .map(|g| compensated_sum(d.finite_lifetimes().map(|l| g.eval(l))) / finite as f64)
        .collect();
    if cfg.targets.entropy {
        row.push(persistent_entropy(d)? - (finite as f64).ln());
    }
    if let Some(l) = cfg.targets.alps_truncation {
        row.push(l * (d.len() as f64).ln() - alps(d, l)?);
    }
    Ok(row)
}

fn functional_labels(cfg: &ExperimentConfig) -> Vec<String> {
    let mut labels: Vec<String> = cfg.targets.functionals.iter().map(FunctionalTarget::label).collect();
    if cfg.targets.entropy {
        labels.push("entropy_offset".into());
    }
    if let Some(l) = cfg.targets.alps_truncation {
        labels.push(format!("alps_offset_L_{l}"));
    }
    labels
}

fn functional_theory(cfg: &ExperimentConfig, m: &Marginal) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for g in &cfg.targets.functionals {
        out.push(match *g {
            FunctionalTarget::PowerP { p } => null::null_lifetime_moment(m, |l| p * l.powf(p - 1.0))?,
            FunctionalTarget::Xlogx => null::null_lifetime_moment(m, |l| l.ln() + 1.0)?,
        });
    }
    if cfg.targets.entropy {
        out.push(null::null_entropy_offset(m)?);
    }
    if let Some(l) = cfg.targets.alps_truncation {
        out.push(if l.is_finite() { null::null_alps_offset(m, l)? } else { f64::NAN });
    }
    Ok(out)
}

/// Laws of large numbers for normalized lifetime functionals, persistent
/// entropy and ALPS, checked by a Cauchy criterion along `n_grid` and
/// against a single run of `mega_factor` times the largest `n`.
pub fn run_unbounded_functional_slln(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = cfg.process_spec();
    let labels = functional_labels(cfg);
    let raw = replicate(cfg, &spec, |_, _, d| functional_values(cfg, d))?;

    let n_mega = cfg.n_grid.last().unwrap() * cfg.mega_factor;
    let mega_path = path_for(&spec, PHASE_MEGA, 0, n_mega)?;
    let mega = functional_values(cfg, &compute_diagram(&TimeSeries::new(mega_path, TiePolicy::PerturbByIndex)?))?;
    let theory = match spec.iid_marginal() {
        Some(m) => Some(functional_theory(cfg, m)?),
        None => None,
    };

    let tol = &cfg.tolerances;
    let mut targets = Vec::new();
    let mut checks = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        let th = theory.as_ref().map(|t| t[j]).filter(|v| v.is_finite());
        let mut traj = trajectory(cfg, &raw, j, label.clone(), th);
        traj.mega_run = Some(mega[j]);
        if let Some(change) = traj.last_change() {
            checks.push(Check::at_most(format!("{label}: change between the two largest n"), change, tol.cauchy_abs, "cauchy_abs"));
        }
        checks.push(Check::at_most(
            format!("{label}: distance to the mega-run at n = {n_mega}"),
            (traj.last().mean - mega[j]).abs(),
            tol.mega_run_abs,
            "mega_run_abs",
        ));
        targets.push(traj);
    }
    write_raw(cfg, &labels, &raw)?;
    Ok(finish(cfg, spec, ReportBody::UnboundedFunctional { targets }, checks, started))
}

/// Corners `(s, t)` entering a rectangle's inclusion-exclusion must satisfy
/// `F(s) > 0` and `F(t) < 1`; infinite coordinates contribute no corner.
fn check_corners(spec: &ProcessSpec, f: &StepFunction) -> Result<()> {
    for term in &f.terms {
        let (s1, s2, t1, t2) = term.rect.coords();
        for s in [s1, s2].into_iter().filter(|s| s.is_finite()) {
            for t in [t1, t2].into_iter().filter(|t| t.is_finite()) {
                let (fs, ft) = (spec.stationary_cdf(s)?, spec.stationary_cdf(t)?);
                if !(fs > 0.0 && ft < 1.0) {
                    return Err(Error::CornerConditionViolated { s, t, fs, ft });
                }
            }
        }
        // The active corner (s2, t1) must be in range even when other
        // coordinates are infinite.
        let (fs, ft) = (spec.stationary_cdf(s2)?, spec.stationary_cdf(t1)?);
        if !(fs > 0.0 && ft < 1.0) {
            return Err(Error::CornerConditionViolated { s: s2, t: t1, fs, ft });
        }
    }
    Ok(())
}

/// Exact `E xi_{0,n}(R)` for an i.i.d. process.
pub fn expected_rectangle_count(m: &Marginal, n: usize, r: &Rectangle) -> Result<f64> {
    let (s1, s2, t1, t2) = r.coords();
    let e = |s: f64, t: f64| -> Result<f64> {
        if s == f64::NEG_INFINITY || t == f64::INFINITY {
            Ok(0.0)
        } else {
            null::expected_betti_finite_n(m, n as u64, s, t)
        }
    };
    Ok(e(s2, t1)? - e(s2, t2)? - e(s1, t1)? + e(s1, t2)?)
}

fn expected_step(m: &Marginal, n: usize, f: &StepFunction) -> Result<f64> {
    let mut parts = Vec::with_capacity(f.terms.len());
    for term in &f.terms {
        parts.push(term.weight * expected_rectangle_count(m, n, &term.rect)?);
    }
    Ok(compensated_sum(parts))
}

/// Central limit theorem for `xi_{0,n}(f)` with step functions `f`: KS test of
/// the studentized replications against `N(0, 1)` at the largest `n`, and a
/// Cauchy check of `Var(xi(f)) / n` along `n_grid`.
pub fn run_clt(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = cfg.process_spec();
    let fs: Vec<StepFunction> =
        cfg.targets.step_functions.iter().map(|f| cfg.resolve_step(&spec, f)).collect::<Result<_>>()?;
    for f in &fs {
        check_corners(&spec, f)?;
    }
    let raw = replicate(cfg, &spec, |_, _, d| Ok(fs.iter().map(|f| integrate_step(d, f)).collect()))?;

    let tol = &cfg.tolerances;
    let normal = |x: f64| null::Marginal::StdNormal.cdf(x);
    let mut targets = Vec::new();
    let mut checks = Vec::new();
    for (j, f) in fs.iter().enumerate() {
        let mut points = Vec::new();
        for (k, &n) in cfg.n_grid.iter().enumerate() {
            let col = column(&raw, k, j);
            let mom = ks::moments(&col);
            let sd = mom.variance.sqrt();
            let (ks_statistic, ks_p_value) = if sd > 0.0 {
                let z: Vec<f64> = col.iter().map(|x| (x - mom.mean) / sd).collect();
                let res = ks::ks_test(&z, normal);
                (Some(res.statistic), Some(res.p_value))
            } else {
                (None, None)
            };
            let exact_mean = spec.iid_marginal().map(|m| expected_step(m, n, f)).transpose()?;
            points.push(CltPoint {
                n,
                mean: mom.mean,
                exact_mean,
                variance_over_n: mom.variance / n as f64,
                ks_statistic,
                ks_p_value,
                skewness: mom.skewness,
                excess_kurtosis: mom.excess_kurtosis,
            });
        }
        let last = points.last().unwrap();
        match last.ks_p_value {
            Some(p) => checks.push(Check::at_least(
                format!("target {j}: KS p-value of studentized values at n = {}", last.n),
                p,
                tol.ks_alpha,
                "ks_alpha",
            )),
            // A zero function gives Z = 0 identically: a degenerate normal law.
            None => checks.push(Check::at_most(format!("target {j}: variance at n = {}", last.n), last.variance_over_n, 0.0, "ks_alpha")),
        }
        if points.len() >= 2 {
            let prev = &points[points.len() - 2];
            let scale = prev.variance_over_n.abs().max(f64::MIN_POSITIVE);
            let rel = if last.variance_over_n == prev.variance_over_n {
                0.0
            } else {
                (last.variance_over_n - prev.variance_over_n).abs() / scale
            };
            checks.push(Check::at_most(
                format!("target {j}: relative change of Var/n from n = {} to n = {}", prev.n, last.n),
                rel,
                tol.cauchy_rel,
                "cauchy_rel",
            ));
        }
        if let Some(exact) = last.exact_mean {
            let se = (last.variance_over_n * last.n as f64 / cfg.reps as f64).sqrt();
            checks.push(Check::at_most(
                format!("target {j}: |mean - exact expectation| at n = {}", last.n),
                (last.mean - exact).abs(),
                tol.se_multiplier * se,
                "se_multiplier",
            ));
        }
        targets.push(CltTarget { target: j, points });
    }
    let labels: Vec<String> = (0..fs.len()).map(|j| format!("step_{j}")).collect();
    write_raw(cfg, &labels, &raw)?;
    Ok(finish(cfg, spec, ReportBody::Clt { targets }, checks, started))
}

/// `Y^inf_j(s, t)` for the positions `j` of one long path, from the oracle's
/// Y-term. Positions whose run could reach the path end are excluded by the
/// caller through `margin`.
fn y_vector(series: &TimeSeries, s: f64, t: f64, upto: usize) -> Result<Vec<f64>> {
    if s == f64::NEG_INFINITY || t == f64::INFINITY {
        return Ok(vec![0.0; upto]);
    }
    (1..=upto).map(|j| Ok(f64::from(y_term(series, j, None, s, t)?))).collect()
}

/// Per path: `Cov(Y_2(a), Y_2(b))` and, for `k = 1..=max_k`,
/// `Cov(Y_2(a), Y_{2+k}(b)) + Cov(Y_{2+k}(a), Y_2(b))`, each from averages
/// over all positions of the path (stationarity).
fn path_cross_covariances(ya: &[f64], yb: &[f64], max_k: usize, usable: usize) -> Vec<f64> {
    // Positions 2..=usable (1-based) serve as the start index.
    let lo = 1;
    let count = usable - lo - max_k;
    let mean = |y: &[f64], shift: usize| compensated_sum(y[lo + shift..lo + shift + count].iter().copied()) / count as f64;
    let cross = |x: &[f64], y: &[f64], shift: usize| {
        compensated_sum((0..count).map(|i| x[lo + i] * y[lo + i + shift])) / count as f64 - mean(x, 0) * mean(y, shift)
    };
    let mut out = vec![cross(ya, yb, 0)];
    for k in 1..=max_k {
        out.push(cross(ya, yb, k) + cross(yb, ya, k));
    }
    out
}

/// Two estimates of `lim n^{-1} Cov(beta^{s1,t1}, beta^{s2,t2})`: the sample
/// covariance across replications at the largest `n`, and the truncated
/// series of Y-covariances estimated along long paths.
pub fn estimate_covariance_series(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = cfg.process_spec();
    let pairs: Vec<ThresholdPair> =
        cfg.targets.pairs.iter().map(|p| cfg.resolve_pair(&spec, p)).collect::<Result<_>>()?;
    let settings = &cfg.covariance;

    // (a) empirical covariance of Betti numbers at each n.
    let betti_at = |d: &PersistenceDiagram, s: f64, t: f64| -> f64 {
        if s == f64::NEG_INFINITY {
            0.0
        } else {
            crate::diagram::betti(d, s, t).map_or(f64::NAN, |b| b as f64)
        }
    };
    let raw = replicate(cfg, &spec, |_, _, d| {
        Ok(pairs.iter().flat_map(|p| [betti_at(d, p.s1, p.t1), betti_at(d, p.s2, p.t2)]).collect())
    })?;

    // (b) Y-series along long paths.
    let paths = settings.paths.unwrap_or(cfg.reps).max(2);
    let usable = settings.path_length - settings.margin;
    let per_path = cfg.execution.map(paths, |p| -> Result<Vec<Vec<f64>>> {
        let path = path_for(&spec, PHASE_PATHS, p, settings.path_length)?;
        let series = TimeSeries::new(path, TiePolicy::PerturbByIndex)?;
        pairs
            .iter()
            .map(|pair| {
                let ya = y_vector(&series, pair.s1, pair.t1, usable)?;
                let yb = y_vector(&series, pair.s2, pair.t2, usable)?;
                Ok(path_cross_covariances(&ya, &yb, settings.max_k, usable))
            })
            .collect()
    });
    let per_path: Vec<Vec<Vec<f64>>> = per_path.into_iter().collect::<Result<_>>()?;

    let n = *cfg.n_grid.last().unwrap();
    let k_last = cfg.n_grid.len() - 1;
    let tol = &cfg.tolerances;
    let mut results = Vec::new();
    let mut checks = Vec::new();
    for (j, pair) in pairs.iter().enumerate() {
        let a = column(&raw, k_last, 2 * j);
        let b = column(&raw, k_last, 2 * j + 1);
        let cov = ks::covariance(&a, &b) / n as f64;
        let (ma, mb) = (ks::mean(&a), ks::mean(&b));
        let products: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
        let empirical = Estimate { mean: cov, std_error: ks::estimate(&products).std_error / n as f64 };

        let mut series = Vec::with_capacity(settings.max_k + 1);
        let mut cumulative = vec![0.0; paths];
        for k in 0..=settings.max_k {
            for (c, path) in cumulative.iter_mut().zip(&per_path) {
                *c += path[j][k];
            }
            let e = ks::estimate(&cumulative);
            series.push(SeriesPoint { k, value: e.mean, std_error: e.std_error });
        }
        let top = series.last().unwrap();
        let combined = (empirical.std_error.powi(2) + top.std_error.powi(2)).sqrt();
        let discrepancy = (empirical.mean - top.value).abs();
        checks.push(Check::at_most(
            format!("pair {j}: |empirical - series(K = {})|", top.k),
            discrepancy,
            tol.se_multiplier * combined,
            "se_multiplier",
        ));
        for w in series.windows(2).filter(|w| w[1].k > tol.k_stable_from) {
            let rel = if w[1].value == w[0].value {
                0.0
            } else {
                (w[1].value - w[0].value).abs() / w[0].value.abs().max(f64::MIN_POSITIVE)
            };
            checks.push(Check::at_most(
                format!("pair {j}: relative change of the series from K = {} to K = {}", w[0].k, w[1].k),
                rel,
                tol.k_stability_rel,
                "k_stability_rel",
            ));
        }
        results.push(CovarianceResult { pair: *pair, n, empirical, series, discrepancy });
    }
    let labels: Vec<String> = (0..pairs.len()).flat_map(|j| [format!("beta_a_{j}"), format!("beta_b_{j}")]).collect();
    write_raw(cfg, &labels, &raw)?;
    let body = ReportBody::Covariance { path_length: settings.path_length, margin: settings.margin, paths, pairs: results };
    Ok(finish(cfg, spec, body, checks, started))
}

/// Runs the experiment named in the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.experiment {
        ExperimentKind::SllnRectangles => run_slln_rectangles(cfg),
        ExperimentKind::Glivenko => run_glivenko(cfg),
        ExperimentKind::UnboundedFunctional => run_unbounded_functional_slln(cfg),
        ExperimentKind::Clt => run_clt(cfg),
        ExperimentKind::Covariance => estimate_covariance_series(cfg),
    }
}
