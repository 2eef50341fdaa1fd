//! Experiment runner for POUnet convergence studies: configuration,
//! sweeps, convergence tables and the frozen-partition scaling study.

pub mod config;
pub mod error;
pub mod experiment;
pub mod table;

pub use config::{ExperimentConfig, ExperimentKind, LoadedConfig, Plan, Profile};
pub use error::{CliError, Result};
pub use experiment::{gen_data, run_theorem1, sweep, train, RunRecord, SweepSummary};
pub use table::emit_convergence_table;
