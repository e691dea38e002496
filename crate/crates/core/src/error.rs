use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("series is empty")]
    EmptySeries,
    #[error("non-finite value {value} at position {index}")]
    NonFiniteInput { index: usize, value: f64 },
    #[error("consecutive values at positions {index} and {} are equal ({value})", index + 1)]
    ConsecutiveTie { index: usize, value: f64 },
    #[error("invalid rectangle ({s1}, {s2}] x ({t1}, {t2}]: need -inf <= s1 <= s2 <= t1 <= t2 <= inf")]
    InvalidRectangle { s1: f64, s2: f64, t1: f64, t2: f64 },
    #[error("invalid thresholds: s = {s} must not exceed t = {t}")]
    InvalidThresholds { s: f64, t: f64 },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("unbounded lifetime functional evaluated on the infinite point")]
    InfiniteLifetime,
    #[error("diagram has no finite points")]
    NoFinitePoints,
    #[error("diagram is empty")]
    EmptyDiagram,
    #[error("density evaluated outside {{x < y}}: x = {x}, y = {y}")]
    OutsideDomain { x: f64, y: f64 },
    #[error("negative lifetime {0}")]
    NegativeLifetime(f64),
    #[error("marginal {0} has no usable quantile function")]
    QuantileUnavailable(String),
    #[error("no stationary law known for Markov kernel {0:?}")]
    UnknownKernelStationaryLaw(String),
    #[error("step-function corner ({s}, {t}) violates F(s) > 0, F(t) < 1 (F(s) = {fs}, F(t) = {ft})")]
    CornerConditionViolated { s: f64, t: f64, fs: f64, ft: f64 },
    #[error("invalid process spec: {0}")]
    InvalidProcess(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
