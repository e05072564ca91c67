//! Experiment harness: configuration, pipeline commands and run manifests.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{cmd_bench, cmd_eval, cmd_generate, cmd_hier, cmd_sobol, cmd_train, format_summary, Summary};
pub use config::{Approach, Experiment, ExperimentConfig, Overrides};
pub use manifest::RunManifest;

use gprda_core::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEPENDENCY: i32 = 3;

/// Process exit code for an error, decided by its innermost cause.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Stability(_) | Error::Shape(_) | Error::Pruning { .. } => EXIT_CONFIG,
        Error::Dependency(_) => EXIT_DEPENDENCY,
        _ => EXIT_FAILURE,
    }
}
