//! Declarative experiments over `ridge-core`: a builtin registry of the
//! toy, quadratic and MoG studies, CSV/JSON artifacts and a comparison table.

pub mod builtins;
pub mod config;
pub mod csv;
pub mod error;
pub mod runner;
pub mod table;

pub use config::{ExperimentConfig, Outputs, Overrides, RunSpec, StartSpec};
pub use error::{exit, HarnessError, Result};
pub use runner::{execute, run_experiment, ExperimentOutput, Outcome, RunRecord, RunSummary};
pub use table::compare_table;

/// Exit code for the outcome of [`run_experiment`].
pub fn exit_code(result: &Result<ExperimentOutput>) -> i32 {
    match result {
        Ok(out) if out.any_diverged() => exit::DIVERGED,
        Ok(_) => exit::OK,
        Err(e) if e.is_config() => exit::CONFIG,
        Err(_) => exit::FAILURE,
    }
}
