//! Batch runner for online-to-nonconvex conversion experiments: run
//! configuration, seeded parallel execution, trace and summary artifacts, and
//! the `verify` check suites.

pub mod config;
pub mod error;
pub mod runner;
pub mod verify;

pub use config::{Overrides, RunConfig, StrategyName, TraceLevel};
pub use error::{CliError, CliResult};
pub use runner::{run, write_artifacts, RunOutput, RunSummary, SeedRow, SCHEMA_VERSION};
pub use verify::{verify, Suite, VerifyReport};

use o2n_core::ParamSet;
use serde::{Deserialize, Serialize};

/// `o2n params` output: the parameter set tagged with the schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub params: ParamSet,
}
