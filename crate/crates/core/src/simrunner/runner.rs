use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use crate::datagen::{DataError, DataGenerator, IterationData};
use crate::filters::LearningRule;
use crate::metrics::{MetricsError, MetricsTrace, NodeSeries};
use crate::protocols::{
    AdaptiveDiffusion, Diffusion, DiffusionVariant, LsAlg, MsdAlg, Noncooperative, Protocol,
    ProtocolError, ProtocolKind, USup,
};
use crate::topology::{CombinerMatrix, NetworkTopology};
use crate::vecops::{all_finite, sq_dist};

/// Runs per work unit. Units are reduced in index order, so results do not
/// depend on the thread count.
const CHUNK_RUNS: u64 = 8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{protocol} failed in run {run}: {source}")]
    Protocol {
        protocol: ProtocolKind,
        run: u64,
        #[source]
        source: ProtocolError,
    },
    #[error("{protocol} diverged at node {} in run {run}, iteration {iteration}", node + 1)]
    DivergenceDetected {
        protocol: ProtocolKind,
        node: usize,
        iteration: usize,
        run: u64,
    },
}

/// Ensemble sums for the fusion convexity check at a few iterations:
/// `‖φ_n − w^o‖²` against `Σ_ℓ c̄_{nℓ}‖w_ℓ − w^o‖²`, both taken against `w^o_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub iterations: Vec<usize>,
    n_nodes: usize,
    runs: u64,
    fused: Vec<f64>,
    bound: Vec<f64>,
    gap_sq: Vec<f64>,
}

impl ConvexityReport {
    fn new(iterations: Vec<usize>, n_nodes: usize) -> Self {
        let cells = iterations.len() * n_nodes;
        Self {
            iterations,
            n_nodes,
            runs: 0,
            fused: vec![0.0; cells],
            bound: vec![0.0; cells],
            gap_sq: vec![0.0; cells],
        }
    }

    fn add(&mut self, probe: usize, node: usize, fused: f64, bound: f64) {
        let cell = probe * self.n_nodes + node;
        self.fused[cell] += fused;
        self.bound[cell] += bound;
        self.gap_sq[cell] += (fused - bound) * (fused - bound);
    }

    fn merge(&mut self, other: &ConvexityReport) {
        for (dst, src) in [
            (&mut self.fused, &other.fused),
            (&mut self.bound, &other.bound),
            (&mut self.gap_sq, &other.gap_sq),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        self.runs += other.runs;
    }

    pub fn runs(&self) -> u64 {
        self.runs
    }

    /// Ensemble mean of `‖φ_n − w^o‖²`.
    pub fn fused_msd(&self, probe: usize, node: usize) -> f64 {
        self.fused[probe * self.n_nodes + node] / self.runs as f64
    }

    /// Ensemble mean of `Σ_ℓ c̄_{nℓ}‖w_ℓ − w^o‖²`.
    pub fn bound(&self, probe: usize, node: usize) -> f64 {
        self.bound[probe * self.n_nodes + node] / self.runs as f64
    }

    /// Standard error of the mean difference `fused − bound`.
    pub fn standard_error(&self, probe: usize, node: usize) -> f64 {
        let cell = probe * self.n_nodes + node;
        let r = self.runs as f64;
        if self.runs < 2 {
            return f64::INFINITY;
        }
        let mean = (self.fused[cell] - self.bound[cell]) / r;
        let var = ((self.gap_sq[cell] / r - mean * mean) * r / (r - 1.0)).max(0.0);
        (var / r).sqrt()
    }

    /// Whether every cell satisfies `fused ≤ bound + sigmas · SE`.
    pub fn holds(&self, sigmas: f64) -> bool {
        (0..self.iterations.len()).all(|p| {
            (0..self.n_nodes).all(|n| {
                let se = self.standard_error(p, n);
                let slack = if se.is_finite() { sigmas * se } else { 0.0 };
                self.fused_msd(p, n) <= self.bound(p, n) + slack + 1e-15
            })
        })
    }
}

/// Ensemble output of one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub iterations: usize,
    pub ensemble_size: u64,
    pub record_stride: usize,
    pub noise_variances: Vec<f64>,
    pub traces: BTreeMap<ProtocolKind, MetricsTrace>,
    /// Ensemble-mean `λ_n(i)` of U-sup, when selected.
    pub lambda: Option<NodeSeries>,
    /// Ensemble-mean `λ̌_n(i)` of U-sup, when selected.
    pub lambda_check: Option<NodeSeries>,
    pub convexity: Option<ConvexityReport>,
    /// Hex sha256 of the `(u, d, w^o)` stream each protocol consumed.
    pub checksums: BTreeMap<ProtocolKind, String>,
    pub elapsed_secs: f64,
}

/// Shared, immutable ingredients of every run.
struct Blueprint<'a> {
    cfg: &'a ScenarioConfig,
    topology: NetworkTopology,
    rules: Vec<LearningRule>,
    noise: Vec<f64>,
    strict: CombinerMatrix,
    full: CombinerMatrix,
}

enum Instance {
    Noncoop(Noncooperative),
    Diffusion(Diffusion),
    Adaptive(AdaptiveDiffusion),
    Msd(MsdAlg),
    Ls(LsAlg),
    Usup(USup),
}

impl Instance {
    fn build(kind: ProtocolKind, bp: &Blueprint<'_>) -> Result<Self, ProtocolError> {
        let cfg = bp.cfg;
        let (m, rules) = (cfg.order, bp.rules.clone());
        Ok(match kind {
            ProtocolKind::Noncooperative => Instance::Noncoop(Noncooperative::new(m, rules)),
            ProtocolKind::DiffusionCta | ProtocolKind::DiffusionAtc => {
                let variant = if kind == ProtocolKind::DiffusionCta {
                    DiffusionVariant::CombineThenAdapt
                } else {
                    DiffusionVariant::AdaptThenCombine
                };
                Instance::Diffusion(Diffusion::new(variant, m, rules, bp.full.clone())?)
            }
            ProtocolKind::AdaptiveDiffusion => Instance::Adaptive(AdaptiveDiffusion::new(
                m,
                rules,
                bp.strict.clone(),
                cfg.adaptive_diffusion,
            )?),
            ProtocolKind::MsdAlg => Instance::Msd(MsdAlg::new(m, rules, &bp.topology, cfg.msd)?),
            ProtocolKind::LsAlg => Instance::Ls(LsAlg::new(m, rules, &bp.topology, cfg.ls)?),
            ProtocolKind::Usup => Instance::Usup(USup::new(m, rules, bp.strict.clone(), cfg.usup)?),
        })
    }

    fn protocol(&mut self) -> &mut dyn Protocol {
        match self {
            Instance::Noncoop(p) => p,
            Instance::Diffusion(p) => p,
            Instance::Adaptive(p) => p,
            Instance::Msd(p) => p,
            Instance::Ls(p) => p,
            Instance::Usup(p) => p,
        }
    }
}

/// Accumulators for one work unit.
struct Partial {
    traces: Vec<MetricsTrace>,
    lambda: Option<(NodeSeries, NodeSeries)>,
    convexity: Option<ConvexityReport>,
    run_digests: Vec<Vec<[u8; 32]>>,
}

impl Partial {
    fn new(bp: &Blueprint<'_>) -> Self {
        let cfg = bp.cfg;
        let n = cfg.n_nodes();
        let has_usup = cfg.protocols.contains(&ProtocolKind::Usup);
        let series = || NodeSeries::new(n, cfg.iterations, cfg.record_stride);
        Self {
            traces: cfg
                .protocols
                .iter()
                .map(|&k| MetricsTrace::new(k, n, cfg.iterations, cfg.record_stride))
                .collect(),
            lambda: has_usup.then(|| (series(), series())),
            convexity: (has_usup && !cfg.probe_iterations.is_empty())
                .then(|| ConvexityReport::new(cfg.probe_iterations.clone(), n)),
            run_digests: vec![Vec::new(); cfg.protocols.len()],
        }
    }

    fn merge(&mut self, other: Partial) -> Result<(), MetricsError> {
        for (a, b) in self.traces.iter_mut().zip(&other.traces) {
            a.merge(b)?;
        }
        if let (Some((l, lc)), Some((ol, olc))) = (self.lambda.as_mut(), other.lambda.as_ref()) {
            l.merge(ol)?;
            lc.merge(olc)?;
        }
        if let (Some(c), Some(oc)) = (self.convexity.as_mut(), other.convexity.as_ref()) {
            c.merge(oc);
        }
        for (a, b) in self.run_digests.iter_mut().zip(other.run_digests) {
            a.extend(b);
        }
        Ok(())
    }
}

fn hash_stream(h: &mut Sha256, data: &IterationData) {
    for x in data
        .regressors
        .iter()
        .chain(&data.desired)
        .chain(&data.plant_prev)
    {
        h.update(x.to_le_bytes());
    }
}

fn simulate_run(bp: &Blueprint<'_>, run: u64, acc: &mut Partial) -> Result<(), SimError> {
    let cfg = bp.cfg;
    let (n, m) = (cfg.n_nodes(), cfg.order);
    let mut data_gen = DataGenerator::new(
        &cfg.plant_model(),
        &cfg.node_data(),
        &bp.noise,
        cfg.master_seed,
        run,
    )?;
    let mut instances = cfg
        .protocols
        .iter()
        .map(|&k| {
            Instance::build(k, bp).map_err(|source| SimError::Protocol {
                protocol: k,
                run,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut hashers: Vec<Sha256> = if cfg.checksum {
        vec![Sha256::new(); instances.len()]
    } else {
        Vec::new()
    };
    let mut data = IterationData::new(n, m);
    let mut probe = 0;

    for i in 0..cfg.iterations {
        data_gen.step(&mut data);
        for (slot, inst) in instances.iter_mut().enumerate() {
            if let Some(h) = hashers.get_mut(slot) {
                hash_stream(h, &data);
            }
            let kind = cfg.protocols[slot];
            let proto = inst.protocol();
            proto
                .step(i, data.observations())
                .map_err(|source| SimError::Protocol {
                    protocol: kind,
                    run,
                    source,
                })?;
            let trace = &mut acc.traces[slot];
            for node in 0..n {
                let est = proto.scored(node);
                if !all_finite(est) {
                    return Err(SimError::DivergenceDetected {
                        protocol: kind,
                        node,
                        iteration: i,
                        run,
                    });
                }
                trace.record(
                    node,
                    i,
                    est,
                    &data.plant,
                    data.regressor(node),
                    data.clean[node],
                    data.desired[node],
                );
            }
            if let Instance::Usup(usup) = inst {
                if let Some((lambda, lambda_check)) = acc.lambda.as_mut() {
                    for (node, state) in usup.nodes().iter().enumerate() {
                        lambda.add(node, i, state.lambda);
                        lambda_check.add(node, i, state.lambda_check);
                    }
                }
                if let Some(report) = acc.convexity.as_mut() {
                    if report.iterations.get(probe) == Some(&i) {
                        probe_convexity(usup, &data.plant, m, probe, report);
                    }
                }
            }
        }
        if acc.convexity.as_ref().and_then(|r| r.iterations.get(probe)) == Some(&i) {
            probe += 1;
        }
    }

    for trace in acc.traces.iter_mut() {
        trace.close_run();
    }
    if let Some((lambda, lambda_check)) = acc.lambda.as_mut() {
        lambda.close_run();
        lambda_check.close_run();
    }
    if let Some(report) = acc.convexity.as_mut() {
        report.runs += 1;
    }
    for (digests, h) in acc.run_digests.iter_mut().zip(hashers) {
        digests.push(h.finalize().into());
    }
    Ok(())
}

fn probe_convexity(
    usup: &USup,
    plant: &[f64],
    m: usize,
    probe: usize,
    report: &mut ConvexityReport,
) {
    let outputs = usup.previous_outputs();
    for (node, state) in usup.nodes().iter().enumerate() {
        let row = usup.combiner().row(node);
        if row.is_empty() {
            continue;
        }
        let fused = sq_dist(&state.phi, plant);
        let bound: f64 = row
            .iter()
            .map(|&(l, c)| c * sq_dist(&outputs[l * m..(l + 1) * m], plant))
            .sum();
        report.add(probe, node, fused, bound);
    }
}

fn run_chunk(bp: &Blueprint<'_>, chunk: u64) -> Result<Partial, SimError> {
    let mut acc = Partial::new(bp);
    let first = chunk * CHUNK_RUNS;
    let last = (first + CHUNK_RUNS).min(bp.cfg.ensemble_size as u64);
    for run in first..last {
        simulate_run(bp, run, &mut acc)?;
    }
    Ok(acc)
}

/// Runs the ensemble. Every protocol sees the same data within a run; runs are
/// spread over the rayon pool and reduced in run order, so the result is
/// bit-identical for any thread count.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult, SimError> {
    let started = Instant::now();
    cfg.validate()?;
    let mut probes = cfg.probe_iterations.clone();
    probes.sort_unstable();
    probes.dedup();
    let cfg = &ScenarioConfig {
        probe_iterations: probes,
        ..cfg.clone()
    };
    let topology = cfg.topology.build()?;
    if topology.n_nodes() != cfg.n_nodes() {
        return Err(ConfigError::Invalid(format!(
            "topology has {} nodes, vectors have {}",
            topology.n_nodes(),
            cfg.n_nodes()
        ))
        .into());
    }
    let bp = Blueprint {
        cfg,
        rules: cfg.rules(),
        noise: cfg.noise_variances(),
        strict: cfg.strict_combiner(&topology)?,
        full: cfg.full_combiner(&topology)?,
        topology,
    };

    let chunks = (cfg.ensemble_size as u64).div_ceil(CHUNK_RUNS);
    let wave = rayon::current_num_threads().max(1) as u64;
    let mut total = Partial::new(&bp);
    let mut next = 0;
    while next < chunks {
        let end = (next + wave).min(chunks);
        let partials: Vec<Result<Partial, SimError>> = (next..end)
            .into_par_iter()
            .map(|c| run_chunk(&bp, c))
            .collect();
        for partial in partials {
            total.merge(partial?)?;
        }
        next = end;
    }

    let checksums = cfg
        .protocols
        .iter()
        .zip(&total.run_digests)
        .filter(|_| cfg.checksum)
        .map(|(&k, digests)| {
            let mut h = Sha256::new();
            for d in digests {
                h.update(d);
            }
            (k, hex::encode(h.finalize()))
        })
        .collect();
    let (lambda, lambda_check) = total
        .lambda
        .map_or((None, None), |(a, b)| (Some(a), Some(b)));
    Ok(RunResult {
        scenario: cfg.name.clone(),
        iterations: cfg.iterations,
        ensemble_size: cfg.ensemble_size as u64,
        record_stride: cfg.record_stride,
        noise_variances: bp.noise,
        traces: cfg.protocols.iter().copied().zip(total.traces).collect(),
        lambda,
        lambda_check,
        convexity: total.convexity,
        checksums,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}
