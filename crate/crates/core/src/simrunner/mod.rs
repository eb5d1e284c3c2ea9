//! Scenario configs and the Monte Carlo ensemble runner.

mod config;
mod runner;
pub mod scenarios;

pub use config::{ConfigError, ScenarioConfig, TopologySpec};
pub use runner::{run_scenario, ConvexityReport, RunResult, SimError};
pub use scenarios::{shipped, shipped_scenarios, SHIPPED};
