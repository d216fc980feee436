//! Experiment runner for the `eki` library: problem setup, parameter sweeps,
//! CSV logs, manifests and plot scripts.

pub mod app;
pub mod check;
pub mod error;
pub mod plot;
pub mod runner;
pub mod spec;

pub use error::CliError;
pub use runner::{fit_loglog_slope, run_experiment, Report};
pub use spec::{ExperimentSpec, ProblemKind, SweepKind};
