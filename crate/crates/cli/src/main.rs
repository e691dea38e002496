use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sublevel_ph::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use sublevel_ph::measures::stats_report;
use sublevel_ph::null::{
    limiting_betti_ratio, null_alps_offset, null_corner_mass, null_entropy_offset, Marginal, NullSampler,
    TabulatedCdf,
};
use sublevel_ph::process::{generate, ProcessSpec};
use sublevel_ph::rng::stream_rng;
use sublevel_ph::{compute_diagram, Error, PersistenceDiagram, TiePolicy, TimeSeries};

const THREADS_ENV: &str = "SUBLEVEL_PH_THREADS";

#[derive(Parser)]
#[command(name = "sublevel-ph", version, about = "Sublevel-set persistence of time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed in process specs and configs.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    Error,
    Perturb,
}

impl From<TieArg> for TiePolicy {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::Error => TiePolicy::Error,
            TieArg::Perturb => TiePolicy::PerturbByIndex,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum MarginalArg {
    Uniform01,
    StdNormal,
    Exponential,
    Tabulated,
}

#[derive(Subcommand)]
enum Command {
    /// Persistence diagram of a series.
    Diagram {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "error")]
        tie_policy: TieArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Entropy, ALPS and total persistence of a series' diagram.
    Stats {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "error")]
        tie_policy: TieArg,
        /// ALPS truncation (`inf` for none).
        #[arg(long = "alps-L", default_value = "inf", value_parser = parse_extended)]
        alps_l: f64,
        /// Fail with exit code 4 if the entropy is undefined.
        #[arg(long)]
        entropy: bool,
        #[arg(long, default_value_t = 1.0)]
        total_p: f64,
    },
    /// Limiting quantities of the i.i.d. null model.
    Null {
        #[arg(long, value_enum, default_value = "uniform01")]
        marginal: MarginalArg,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// CSV table `x,F,f` for the tabulated marginal.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, value_parser = parse_extended)]
        s: f64,
        #[arg(long, value_parser = parse_extended)]
        t: f64,
        /// Read `s` and `t` as probability levels.
        #[arg(long)]
        levels: bool,
        #[arg(long = "alps-L", value_parser = parse_extended)]
        alps_l: Option<f64>,
        /// Also emit this many sampled diagram points.
        #[arg(long, default_value_t = 0)]
        draws: usize,
    },
    /// Sample paths of a process spec (JSON).
    Simulate {
        spec: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        streams: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Strong-law experiments: rectangles, lifetime law, unbounded functionals.
    VerifySlln { config: PathBuf },
    /// Normality of rescaled step-function integrals.
    VerifyClt { config: PathBuf },
    /// Limiting covariance of Betti numbers.
    Covariance { config: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::NonFiniteInput { .. } | Error::EmptySeries => 2,
            Error::ConsecutiveTie { .. } => 3,
            Error::NoFinitePoints => 4,
            Error::InvalidConfig(_) | Error::InvalidProcess(_) | Error::UnknownKernelStationaryLaw(_) => 5,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

fn parse_extended(text: &str) -> Result<f64, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        other => other.parse().map_err(|_| format!("not a number: {text:?}")),
    }
}

/// Newline-separated floats, or a single-column CSV with an optional header.
fn parse_series(text: &str) -> Result<Vec<f64>, Error> {
    let mut values = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        if field.contains(',') {
            return Err(Error::Parse(format!("line {}: expected a single column", k + 1)));
        }
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if values.is_empty() && k == 0 && field.chars().next().is_some_and(char::is_alphabetic) => {}
            Err(_) => return Err(Error::Parse(format!("line {}: not a number: {field:?}", k + 1))),
        }
    }
    if values.is_empty() {
        return Err(Error::Parse("no values in input".into()));
    }
    Ok(values)
}

fn read(path: &Path, code: u8) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(code, format!("cannot read {}: {e}", path.display())))
}

fn read_series(path: &Path, policy: TiePolicy) -> Result<TimeSeries, Failure> {
    let values = parse_series(&read(path, 2)?)?;
    Ok(TimeSeries::new(values, policy)?)
}

fn diagram_json(d: &PersistenceDiagram) -> Value {
    let points: Vec<Value> = d
        .points()
        .iter()
        .map(|p| {
            let death = if p.death.is_infinite() { json!("inf") } else { json!(p.death) };
            json!({"birth": p.birth, "death": death})
        })
        .collect();
    json!({ "points": points })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn marginal(kind: MarginalArg, rate: f64, table: Option<&Path>) -> Result<Marginal, Failure> {
    let m = match kind {
        MarginalArg::Uniform01 => Marginal::Uniform01,
        MarginalArg::StdNormal => Marginal::StdNormal,
        MarginalArg::Exponential => Marginal::Exponential { rate },
        MarginalArg::Tabulated => {
            let path = table.ok_or_else(|| Failure::new(2, "--table is required for the tabulated marginal"))?;
            Marginal::Tabulated(TabulatedCdf::from_csv(&read(path, 2)?)?)
        }
    };
    m.validate()?;
    Ok(m)
}

fn load_config(path: &Path, seed: Option<u64>, allowed: &[ExperimentKind]) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::from_json(&read(path, 5)?)?;
    if !allowed.contains(&cfg.experiment) {
        return Err(Failure::new(5, format!("experiment {:?} is not handled by this subcommand", cfg.experiment)));
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs a config; the output is the report, and any failed check turns the
/// exit code to 1 after the report is written.
fn verify(cfg: &ExperimentConfig) -> Result<(String, bool), Failure> {
    let report = run_experiment(cfg)?;
    for c in report.failed_checks() {
        eprintln!("FAIL {}: {} vs {} ({})", c.name, c.value, c.threshold, c.tolerance);
    }
    let mut text = report.to_json();
    text.push('\n');
    Ok((text, report.pass))
}

fn run(cli: &Cli) -> Result<(String, bool), Failure> {
    match &cli.command {
        Command::Diagram { input, tie_policy, format } => {
            let d = compute_diagram(&read_series(input, (*tie_policy).into())?);
            Ok((
                match format {
                    Format::Csv => d.to_csv(),
                    Format::Json => pretty(&diagram_json(&d)),
                },
                true,
            ))
        }
        Command::Stats { input, tie_policy, alps_l, entropy, total_p } => {
            let d = compute_diagram(&read_series(input, (*tie_policy).into())?);
            if *entropy && d.finite_len() == 0 {
                return Err(Error::NoFinitePoints.into());
            }
            let report = stats_report(&d, *alps_l, *total_p)?;
            Ok((pretty(&serde_json::to_value(report).expect("report serializes")), true))
        }
        Command::Null { marginal: kind, rate, table, s, t, levels, alps_l, draws } => {
            let m = marginal(*kind, *rate, table.as_deref())?;
            let (s, t) = if *levels { (m.level(*s)?, m.level(*t)?) } else { (*s, *t) };
            let mut out = json!({
                "marginal": m.name(),
                "s": s,
                "t": t,
                "limiting_betti_ratio": limiting_betti_ratio(&m, s, t)?,
                "corner_mass": null_corner_mass(&m, s, t)?,
                "entropy_offset": null_entropy_offset(&m)?,
            });
            if let Some(l) = alps_l {
                out["alps_offset"] = json!(null_alps_offset(&m, *l)?);
            }
            if *draws > 0 {
                let mut rng = stream_rng(cli.seed.unwrap_or(0), 0);
                let mut sampler = NullSampler::new(m)?;
                let points: Vec<Value> = (0..*draws)
                    .map(|_| sampler.sample(&mut rng).map(|(b, d)| json!([b, d])))
                    .collect::<Result<_, _>>()?;
                out["samples"] = Value::Array(points);
                out["acceptance_rate"] = json!(sampler.stats().rate());
            }
            Ok((pretty(&out), true))
        }
        Command::Simulate { spec, n, streams, format } => {
            let mut spec: ProcessSpec = serde_json::from_str(&read(spec, 5)?)
                .map_err(|e| Failure::new(5, format!("invalid process spec: {e}")))?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let paths: Vec<Vec<f64>> = (0..*streams)
                .map(|k| generate(&spec, *n, k).map(|s| s.values().to_vec()))
                .collect::<Result<_, _>>()?;
            Ok((
                match format {
                    Format::Json => pretty(&json!({ "streams": paths })),
                    Format::Csv => {
                        let header: Vec<String> = (0..paths.len()).map(|k| format!("stream_{k}")).collect();
                        let mut s = header.join(",") + "\n";
                        for i in 0..*n {
                            let row: Vec<String> = paths.iter().map(|p| p[i].to_string()).collect();
                            s.push_str(&row.join(","));
                            s.push('\n');
                        }
                        s
                    }
                },
                true,
            ))
        }
        Command::VerifySlln { config } => verify(&load_config(
            config,
            cli.seed,
            &[ExperimentKind::SllnRectangles, ExperimentKind::Glivenko, ExperimentKind::UnboundedFunctional],
        )?),
        Command::VerifyClt { config } => verify(&load_config(config, cli.seed, &[ExperimentKind::Clt])?),
        Command::Covariance { config } => verify(&load_config(config, cli.seed, &[ExperimentKind::Covariance])?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(threads) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()) {
        sublevel_ph::exec::init_thread_pool(threads);
    }
    let result = run(&cli).and_then(|(text, pass)| {
        match &cli.out {
            Some(path) => fs::write(path, &text)
                .map_err(|e| Failure::new(1, format!("cannot write {}: {e}", path.display())))?,
            None => {
                let _ = std::io::stdout().write_all(text.as_bytes());
            }
        }
        Ok(pass)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
