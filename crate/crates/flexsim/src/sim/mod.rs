//! Scenario configuration and the simulation runner.

pub mod config;
pub mod run;

pub use config::{ConfigError, ScenarioConfig, StartMode};
pub use run::{run_controller, run_scenario, RunError, RunLog, RunOutput, RunSummary};
