//! Scenario runner: configuration, sweeps over molecules, occupations,
//! pulses and freeze masks, checkpointed execution and result files.

pub mod config;
pub mod emit;
pub mod error;
pub mod manifest;
pub mod scenario;

pub use config::{parse_config, ConfigError, Preset, RunSpec, ScenarioConfig};
pub use error::{Result, RunnerError};
pub use manifest::{RunManifest, RunRecord, RunStatus};
pub use scenario::{ground_table, report, resume_scenario, run_scenario, RunOptions};
