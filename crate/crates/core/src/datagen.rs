//! Synthetic data: AR(1) tap-delay regressors, a random-walk plant, and noisy
//! linear measurements `d_n(i) = u_{n,i} w^o_{i-1} + v_n(i)`.
//!
//! Every run draws from counter-split ChaCha streams of one master seed: stream
//! `run·(N+1)` drives the plant and stream `run·(N+1) + 1 + n` drives node `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vecops::dot;

/// Delay-line burn-in, in multiples of the filter order.
pub const BURN_IN_FACTOR: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("dimension mismatch: regressor has {regressor} taps, plant has {plant}")]
    DimensionMismatch { regressor: usize, plant: usize },
    #[error("correlation factor {0} is outside (-1, 1)")]
    InvalidCorrelation(f64),
    #[error("SNR {0} dB is not finite")]
    InvalidSnr(f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("expected {expected} per-node values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Random-walk plant `w^o_i = w^o_{i-1} + q_i`, `q_i ~ N(0, σ²_q I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub order: usize,
    pub initial: Vec<f64>,
    pub sigma_q2: f64,
}

impl PlantModel {
    /// Plant starting at `𝟙/√M` (unit norm).
    pub fn unit(order: usize, sigma_q2: f64) -> Self {
        Self {
            order,
            initial: vec![1.0 / (order as f64).sqrt(); order],
            sigma_q2,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.sigma_q2 == 0.0
    }

    /// Adds one increment to `plant` in place.
    pub fn step(&self, plant: &mut [f64], rng: &mut impl Rng) {
        if self.sigma_q2 == 0.0 {
            return;
        }
        let sd = self.sigma_q2.sqrt();
        for w in plant.iter_mut() {
            let q: f64 = rng.sample(StandardNormal);
            *w += sd * q;
        }
    }
}

/// Per-node input statistics and target SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeDataConfig {
    pub beta: f64,
    pub snr_db: f64,
    pub sigma_x2: f64,
}

impl NodeDataConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.beta > -1.0 && self.beta < 1.0) {
            return Err(DataError::InvalidCorrelation(self.beta));
        }
        if !self.snr_db.is_finite() {
            return Err(DataError::InvalidSnr(self.snr_db));
        }
        if !(self.sigma_x2 > 0.0) {
            return Err(DataError::NonPositive("sigma_x2"));
        }
        Ok(())
    }
}

/// Toeplitz covariance of an AR(1) tap-delay regressor, row-major `M×M`,
/// entries `σ²_x β^{|k-j|}`.
pub fn ar1_covariance(beta: f64, sigma_x2: f64, order: usize) -> Vec<f64> {
    let mut r = vec![0.0; order * order];
    for k in 0..order {
        for j in 0..order {
            r[k * order + j] = sigma_x2 * beta.powi((k as i32 - j as i32).abs());
        }
    }
    r
}

/// `w^T R w` for the AR(1) covariance.
pub fn signal_power(beta: f64, sigma_x2: f64, plant: &[f64]) -> f64 {
    let m = plant.len();
    let r = ar1_covariance(beta, sigma_x2, m);
    let mut total = 0.0;
    for k in 0..m {
        total += plant[k] * dot(&r[k * m..(k + 1) * m], plant);
    }
    total
}

/// Noise variance giving the requested SNR against the plant `plant`.
pub fn snr_to_noise_variance(snr_db: f64, signal_power: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// `d = u·w + √σ²_v · v`.
pub fn measure(
    u: &[f64],
    plant: &[f64],
    sigma_v2: f64,
    rng: &mut impl Rng,
) -> Result<f64, DataError> {
    if u.len() != plant.len() {
        return Err(DataError::DimensionMismatch {
            regressor: u.len(),
            plant: plant.len(),
        });
    }
    let noise: f64 = rng.sample(StandardNormal);
    Ok(dot(u, plant) + sigma_v2.sqrt() * noise)
}

/// AR(1) process feeding a tap-delay line, newest sample first.
#[derive(Debug, Clone)]
pub struct RegressorLine {
    beta: f64,
    innovation_gain: f64,
    taps: Vec<f64>,
}

impl RegressorLine {
    /// Zero-filled delay line.
    pub fn new(beta: f64, sigma_x2: f64, order: usize) -> Self {
        Self {
            beta,
            innovation_gain: (sigma_x2 * (1.0 - beta * beta)).sqrt(),
            taps: vec![0.0; order],
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Shifts in `u(i) = β u(i-1) + √(1-β²) x(i)` with a fresh innovation.
    pub fn next(&mut self, rng: &mut impl Rng) -> &[f64] {
        let x: f64 = rng.sample(StandardNormal);
        let newest = self.beta * self.taps[0] + self.innovation_gain * x;
        self.taps.rotate_right(1);
        self.taps[0] = newest;
        &self.taps
    }
}

/// Everything generated at one iteration of one run.
#[derive(Debug, Clone)]
pub struct IterationData {
    pub order: usize,
    /// Row-major `N×M` regressors.
    pub regressors: Vec<f64>,
    pub desired: Vec<f64>,
    /// Noise-free outputs `u_{n,i} w^o_{i-1}`.
    pub clean: Vec<f64>,
    /// `w^o_{i-1}`, the plant that produced `desired`.
    pub plant_prev: Vec<f64>,
    /// `w^o_i`, the plant estimates are scored against.
    pub plant: Vec<f64>,
}

impl IterationData {
    pub fn new(n_nodes: usize, order: usize) -> Self {
        Self {
            order,
            regressors: vec![0.0; n_nodes * order],
            desired: vec![0.0; n_nodes],
            clean: vec![0.0; n_nodes],
            plant_prev: vec![0.0; order],
            plant: vec![0.0; order],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.desired.len()
    }

    pub fn regressor(&self, node: usize) -> &[f64] {
        &self.regressors[node * self.order..(node + 1) * self.order]
    }

    /// What the cooperation protocols are allowed to see.
    pub fn observations(&self) -> Observations<'_> {
        Observations {
            order: self.order,
            regressors: &self.regressors,
            desired: &self.desired,
        }
    }
}

/// Regressors and measurements only.
#[derive(Debug, Clone, Copy)]
pub struct Observations<'a> {
    pub order: usize,
    pub regressors: &'a [f64],
    pub desired: &'a [f64],
}

impl<'a> Observations<'a> {
    #[inline]
    pub fn regressor(&self, node: usize) -> &'a [f64] {
        &self.regressors[node * self.order..(node + 1) * self.order]
    }

    pub fn n_nodes(&self) -> usize {
        self.desired.len()
    }
}

struct NodeStream {
    line: RegressorLine,
    noise_sd: f64,
    rng: ChaCha8Rng,
}

/// Data source for one Monte Carlo run.
pub struct DataGenerator {
    plant_model: PlantModel,
    plant: Vec<f64>,
    plant_rng: ChaCha8Rng,
    nodes: Vec<NodeStream>,
}

/// ChaCha stream `stream` of `master_seed`.
pub fn substream(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

impl DataGenerator {
    /// `noise_variances[n]` is `σ²_{v,n}`. The delay lines are burned in before
    /// returning.
    pub fn new(
        plant_model: &PlantModel,
        nodes: &[NodeDataConfig],
        noise_variances: &[f64],
        master_seed: u64,
        run_index: u64,
    ) -> Result<Self, DataError> {
        if noise_variances.len() != nodes.len() {
            return Err(DataError::LengthMismatch {
                expected: nodes.len(),
                got: noise_variances.len(),
            });
        }
        if plant_model.initial.len() != plant_model.order {
            return Err(DataError::LengthMismatch {
                expected: plant_model.order,
                got: plant_model.initial.len(),
            });
        }
        let base = run_index * (nodes.len() as u64 + 1);
        let order = plant_model.order;
        let mut streams = Vec::with_capacity(nodes.len());
        for (n, (cfg, &sigma_v2)) in nodes.iter().zip(noise_variances).enumerate() {
            cfg.validate()?;
            if !(sigma_v2 >= 0.0) {
                return Err(DataError::NonPositive("noise variance"));
            }
            let mut rng = substream(master_seed, base + 1 + n as u64);
            let mut line = RegressorLine::new(cfg.beta, cfg.sigma_x2, order);
            for _ in 0..BURN_IN_FACTOR * order {
                line.next(&mut rng);
            }
            streams.push(NodeStream {
                line,
                noise_sd: sigma_v2.sqrt(),
                rng,
            });
        }
        Ok(Self {
            plant: plant_model.initial.clone(),
            plant_model: plant_model.clone(),
            plant_rng: substream(master_seed, base),
            nodes: streams,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn order(&self) -> usize {
        self.plant_model.order
    }

    /// Produces iteration `i`'s data: measurements against `w^o_{i-1}`, then the
    /// plant moves to `w^o_i`.
    pub fn step(&mut self, out: &mut IterationData) {
        let m = self.plant_model.order;
        out.plant_prev.copy_from_slice(&self.plant);
        for (n, node) in self.nodes.iter_mut().enumerate() {
            let u = node.line.next(&mut node.rng);
            let clean = dot(u, &self.plant);
            let v: f64 = node.rng.sample(StandardNormal);
            out.regressors[n * m..(n + 1) * m].copy_from_slice(u);
            out.clean[n] = clean;
            out.desired[n] = clean + node.noise_sd * v;
        }
        self.plant_model.step(&mut self.plant, &mut self.plant_rng);
        out.plant.copy_from_slice(&self.plant);
    }
}
