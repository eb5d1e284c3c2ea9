use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datagen::{
    ar1_covariance, signal_power, snr_to_noise_variance, DataError, NodeDataConfig, PlantModel,
};
use crate::filters::{LearningRule, RuleKind, DEFAULT_NLMS_EPSILON};
use crate::metrics::default_window;
use crate::protocols::{FeedbackPeriod, LsParams, MsdParams, ProtocolKind, USupParams};
use crate::theory::TheoryInputs;
use crate::topology::{CombinerMatrix, CombinerRule, NetworkTopology, SupportMode, TopologyError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown scenario `{0}` (not a shipped name or a readable file)")]
    UnknownScenario(String),
    #[error("override `{0}` does not name an existing config key")]
    UnknownKey(String),
    #[error("override `{0}` must look like key=value")]
    MalformedOverride(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// How the graph is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    /// Undirected 1-based edges; self-loops are implicit.
    Edges {
        nodes: usize,
        edges: Vec<[usize; 2]>,
    },
    /// Random geometric graph in the unit square.
    Geometric {
        nodes: usize,
        radius: f64,
        seed: u64,
    },
    /// Text edge list (1-based `u v` per line), resolved relative to the working directory.
    EdgeFile { path: PathBuf, nodes: Option<usize> },
}

impl TopologySpec {
    pub fn build(&self) -> Result<NetworkTopology, ConfigError> {
        Ok(match self {
            TopologySpec::Edges { nodes, edges } => {
                NetworkTopology::from_one_based_edges(*nodes, edges)?
            }
            TopologySpec::Geometric {
                nodes,
                radius,
                seed,
            } => NetworkTopology::random_geometric(*nodes, *radius, *seed)?.0,
            TopologySpec::EdgeFile { path, nodes } => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                NetworkTopology::parse_edge_list(&text, *nodes)?
            }
        })
    }
}

fn default_sigma_x2() -> f64 {
    1.0
}

fn default_rule() -> RuleKind {
    RuleKind::Nlms
}

fn default_epsilon() -> f64 {
    DEFAULT_NLMS_EPSILON
}

fn default_stride() -> usize {
    1
}

fn default_protocols() -> Vec<ProtocolKind> {
    vec![ProtocolKind::Noncooperative, ProtocolKind::Usup]
}

/// One experiment: network, data statistics, protocols and Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub topology: TopologySpec,
    /// Filter order `M`.
    pub order: usize,
    pub snr_db: Vec<f64>,
    pub mu: Vec<f64>,
    /// AR(1) input correlation per node; empty means white inputs.
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default = "default_sigma_x2")]
    pub sigma_x2: f64,
    #[serde(default = "default_rule")]
    pub rule: RuleKind,
    #[serde(default = "default_epsilon")]
    pub nlms_epsilon: f64,
    /// Random-walk increment variance per coefficient.
    #[serde(default)]
    pub sigma_q2: f64,
    #[serde(default = "default_protocols")]
    pub protocols: Vec<ProtocolKind>,
    /// Fixed combiner rule for diffusion, U-sup and adaptive diffusion.
    #[serde(default)]
    pub combiner: CombinerRule,
    #[serde(default)]
    pub usup: USupParams,
    #[serde(default)]
    pub adaptive_diffusion: USupParams,
    #[serde(default)]
    pub ls: LsParams,
    #[serde(default)]
    pub msd: MsdParams,
    pub iterations: usize,
    /// Horizon used by `σ²_q` robustness sweeps; `null` reuses `iterations`.
    /// Supervisors settle slowly on weakly varying plants, so sweeps usually
    /// need a longer run than the single-scenario transient plots.
    #[serde(default)]
    pub sweep_iterations: Option<usize>,
    pub ensemble_size: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Iterations averaged for steady-state figures; `null` picks the default rule.
    #[serde(default)]
    pub steady_state_window: Option<usize>,
    /// Traces are block-averaged over this many iterations.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Iterations at which the fusion convexity probe samples U-sup.
    #[serde(default)]
    pub probe_iterations: Vec<usize>,
    /// Hash the data stream seen by each protocol.
    #[serde(default)]
    pub checksum: bool,
    /// Feedback periods swept by `sweep --feedback`.
    #[serde(default)]
    pub feedback_grid: Vec<FeedbackPeriod>,
    /// Default `σ²_q` grid for robustness sweeps.
    #[serde(default)]
    pub sigma_q2_grid: Vec<f64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Shipped scenario name or path to a JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ConfigError> {
        if let Some(cfg) = super::scenarios::shipped(name_or_path) {
            return Ok(cfg);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Self::from_file(path);
        }
        Err(ConfigError::UnknownScenario(name_or_path.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario configs always serialize")
    }

    pub fn n_nodes(&self) -> usize {
        match &self.topology {
            TopologySpec::Edges { nodes, .. } | TopologySpec::Geometric { nodes, .. } => *nodes,
            TopologySpec::EdgeFile { nodes, .. } => nodes.unwrap_or(self.snr_db.len()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let n = self.n_nodes();
        if n == 0 {
            return bad("network has no nodes".into());
        }
        if self.order == 0 {
            return bad("order must be positive".into());
        }
        for (what, len) in [("snr_db", self.snr_db.len()), ("mu", self.mu.len())] {
            if len != n {
                return bad(format!("{what} has {len} entries for {n} nodes"));
            }
        }
        if !self.beta.is_empty() && self.beta.len() != n {
            return bad(format!(
                "beta has {} entries for {n} nodes",
                self.beta.len()
            ));
        }
        for (k, &mu) in self.mu.iter().enumerate() {
            let ok = match self.rule {
                RuleKind::Nlms => mu > 0.0 && mu < 2.0,
                RuleKind::Lms => mu > 0.0 && mu.is_finite(),
            };
            if !ok {
                return bad(format!("mu[{k}] = {mu} is outside the stable range"));
            }
        }
        if !(self.sigma_q2 >= 0.0 && self.sigma_q2.is_finite()) {
            return bad(format!(
                "sigma_q2 = {} must be finite and nonnegative",
                self.sigma_q2
            ));
        }
        if self
            .sigma_q2_grid
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("sigma_q2_grid entries must be finite and nonnegative".into());
        }
        if self.iterations == 0 || self.ensemble_size == 0 {
            return bad("iterations and ensemble_size must be positive".into());
        }
        if self.sweep_iterations == Some(0) {
            return bad("sweep_iterations must be positive".into());
        }
        if self.record_stride == 0 {
            return bad("record_stride must be positive".into());
        }
        if self.protocols.is_empty() {
            return bad("select at least one protocol".into());
        }
        if let Some(w) = self.steady_state_window {
            if w == 0 || w > self.iterations {
                return bad(format!(
                    "steady_state_window {w} must lie in 1..={}",
                    self.iterations
                ));
            }
        }
        if let Some(&p) = self
            .probe_iterations
            .iter()
            .find(|&&p| p >= self.iterations)
        {
            return bad(format!("probe iteration {p} is past the horizon"));
        }
        for params in [&self.usup, &self.adaptive_diffusion] {
            params
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for cfg in self.node_data() {
            cfg.validate()?;
        }
        if !(self.nlms_epsilon >= 0.0) {
            return bad("nlms_epsilon must be nonnegative".into());
        }
        Ok(())
    }

    pub fn node_data(&self) -> Vec<NodeDataConfig> {
        (0..self.n_nodes())
            .map(|k| NodeDataConfig {
                beta: self.beta.get(k).copied().unwrap_or(0.0),
                snr_db: self.snr_db[k],
                sigma_x2: self.sigma_x2,
            })
            .collect()
    }

    pub fn plant_model(&self) -> PlantModel {
        PlantModel::unit(self.order, self.sigma_q2)
    }

    /// `σ²_{v,n}` from each node's SNR against the initial plant.
    pub fn noise_variances(&self) -> Vec<f64> {
        let plant = self.plant_model();
        self.node_data()
            .iter()
            .map(|c| {
                snr_to_noise_variance(c.snr_db, signal_power(c.beta, c.sigma_x2, &plant.initial))
            })
            .collect()
    }

    pub fn rules(&self) -> Vec<LearningRule> {
        self.mu
            .iter()
            .map(|&mu| match self.rule {
                RuleKind::Lms => LearningRule::lms(mu),
                RuleKind::Nlms => LearningRule::nlms(mu).with_epsilon(self.nlms_epsilon),
            })
            .collect()
    }

    /// Copy of this config set up for one `σ²_q` grid point.
    pub fn sweep_point(&self, sigma_q2: f64) -> ScenarioConfig {
        let mut cfg = self.clone();
        cfg.sigma_q2 = sigma_q2;
        if let Some(n) = self.sweep_iterations {
            cfg.iterations = n;
            cfg.probe_iterations.retain(|&p| p < n);
            if cfg.steady_state_window.is_some_and(|w| w > n) {
                cfg.steady_state_window = None;
            }
        }
        cfg
    }

    pub fn steady_window(&self) -> usize {
        self.steady_state_window
            .unwrap_or_else(|| default_window(self.iterations))
    }

    /// Strict combiner shared by U-sup and adaptive diffusion.
    pub fn strict_combiner(
        &self,
        topology: &NetworkTopology,
    ) -> Result<CombinerMatrix, ConfigError> {
        Ok(self
            .combiner
            .build_strict_with_fallback(topology, &self.noise_variances())?)
    }

    /// Full-neighborhood combiner for plain diffusion.
    pub fn full_combiner(&self, topology: &NetworkTopology) -> Result<CombinerMatrix, ConfigError> {
        Ok(self.combiner.build(
            topology,
            &self.noise_variances(),
            SupportMode::FullNeighborhood,
        )?)
    }

    /// Inputs for the U-sup model.
    pub fn theory_inputs(&self) -> Result<TheoryInputs, ConfigError> {
        self.validate()?;
        let topology = self.topology.build()?;
        let m = self.order;
        Ok(TheoryInputs {
            order: m,
            rule: self.rule,
            mu: self.mu.clone(),
            covariances: self
                .node_data()
                .iter()
                .map(|c| DMatrix::from_row_slice(m, m, &ar1_covariance(c.beta, c.sigma_x2, m)))
                .collect(),
            noise_variances: self.noise_variances(),
            sigma_q2: self.sigma_q2,
            initial: self.plant_model().initial,
            combiner: self.strict_combiner(&topology)?,
            usup: self.usup,
        })
    }

    /// Applies a dotted-path `key=value` override. The key must already exist;
    /// the value is read as JSON when it parses, else as a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        self.apply_overrides(&[assignment])
    }

    /// Applies several overrides in order and validates only the final result,
    /// so intermediate combinations (say, a shorter horizon before its probes
    /// are moved) need not be valid on their own.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<(), ConfigError> {
        let mut doc = serde_json::to_value(&*self)?;
        for assignment in assignments {
            let assignment = assignment.as_ref();
            let (key, raw) = assignment
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedOverride(assignment.to_string()))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = match slot {
                    Value::Object(map) => map
                        .get_mut(part)
                        .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?,
                    Value::Array(items) => part
                        .parse::<usize>()
                        .ok()
                        .and_then(|idx| items.get_mut(idx))
                        .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?,
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                };
            }
            *slot = value;
        }
        let updated: ScenarioConfig = serde_json::from_value(doc)?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
