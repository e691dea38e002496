//! Zero-dimensional sublevel-set persistence of time series.
//!
//! The crate computes persistence diagrams of sampled paths, counts points in
//! rectangles, evaluates persistent Betti numbers through independent run
//! formulas, computes diagram summaries (entropy, ALPS, lifetime integrals),
//! evaluates the i.i.d. limiting measure, generates dependent processes and runs
//! Monte Carlo checks of the laws of large numbers and central limit theorems
//! for the diagram measure.

pub mod diagram;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod ks;
pub mod measures;
pub mod null;
pub mod oracle;
pub mod process;
pub mod quadrature;
pub mod rng;

mod ext_float;

pub use diagram::{
    betti, compute_diagram, rectangle_count, PersistenceDiagram, Point, Rectangle, TiePolicy,
    TimeSeries,
};
pub use error::{Error, Result};
pub use exec::Execution;
