//! Config-driven experiment runner over `udim-core`.

pub mod config;
mod error;
pub mod experiment;
pub mod report;
pub mod selftest;

pub use config::{ExperimentConfig, MethodName};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, Manifest};
pub use report::{emit_analysis, emit_comparison, AnalysisKind};
