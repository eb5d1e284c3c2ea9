//! Simulation and analysis of adaptive networks.
//!
//! A network of nodes, each running a local LMS/NLMS filter, estimates a common
//! (possibly drifting) parameter vector. The crate provides:
//!
//! - [`topology`]: graphs, neighborhoods and fixed combiner rules,
//! - [`datagen`]: AR(1) tap-delay regressors, random-walk plants, noisy measurements,
//! - [`filters`]: the local adaptive update rules,
//! - [`protocols`]: non-cooperative, diffusion, adaptive diffusion, MSD-alg, LS-alg
//!   and the supervised protocol (U-sup),
//! - [`metrics`]: MSD/EMSE/MSE traces, steady-state estimates and robustness sweeps,
//! - [`theory`]: the deterministic mean and mean-square model of U-sup,
//! - [`simrunner`]: scenario configs and the Monte Carlo ensemble runner,
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod datagen;
pub mod filters;
pub mod metrics;
pub mod protocols;
pub mod simrunner;
pub mod theory;
pub mod topology;

mod vecops;

pub use datagen::{DataGenerator, IterationData, PlantModel};
pub use filters::{LearningRule, RuleKind};
pub use metrics::MetricsTrace;
pub use protocols::{FeedbackPeriod, NodeState, ProtocolKind, USupParams};
pub use simrunner::{run_scenario, RunResult, ScenarioConfig, SimError};
pub use topology::{CombinerMatrix, CombinerRule, NetworkTopology, SupportMode};
