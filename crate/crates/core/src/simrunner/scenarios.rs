//! The bundled experiments `example1` … `example6`.
//!
//! The 15-node graphs of the first three examples are only known through a few
//! degree facts, so they come from the seeded geometric generator with seeds
//! chosen to reproduce those facts (see the tests below).

use super::config::{ScenarioConfig, TopologySpec};
use crate::filters::RuleKind;
use crate::protocols::{FeedbackPeriod, LsParams, MsdParams, ProtocolKind, USupParams};
use crate::topology::CombinerRule;

pub const SHIPPED: [&str; 6] = [
    "example1", "example2", "example3", "example4", "example5", "example6",
];

/// Geometric graph parameters `(radius, seed)` for the 15-node examples.
pub const EXAMPLE1_GRAPH: (f64, u64) = (0.3, 27_911);
pub const EXAMPLE2_GRAPH: (f64, u64) = (0.3, 2_314);
pub const EXAMPLE3_GRAPH: (f64, u64) = (0.3, 133_604);

const EX1_SNR: [f64; 15] = [
    -4.9, 11.8, 19.1, 15.7, 16.4, 14.5, 13.8, 15.9, 11.7, 12.1, 11.6, 11.1, 18.9, 14.6, 18.1,
];
// The printed step-size list has one entry more than there are nodes; the last is dropped.
const EX1_MU: [f64; 16] = [
    1., 10., 1., 1., 1., 10., 1., 10., 1., 10., 1., 1., 1., 10., 1., 1.,
];
const EX2_SNR: [f64; 15] = [
    22.5, 11.6, 14.5, 17.7, 10.1, 14.7, 10.3, 18.7, 10.5, 17.8, 15.9, 12.4, 17.8, 15.2, 19.5,
];
const EX23_MU: [f64; 15] = [
    1., 10., 1., 1., 10., 1., 10., 1., 10., 1., 1., 1., 10., 1., 1.,
];
const EX3_SNR: [f64; 15] = [
    12.2, 15.2, 15.5, 15.5, 20.0, 11.2, 17.2, 12.4, 17.8, 16.1, 12.6, 10.1, 19.5, 12.1, 12.6,
];
const EX3_BETA: [f64; 15] = [
    0.63, 0.95, 0.63, 0.63, 0.95, 0.63, 0.95, 0.63, 0.95, 0.63, 0.63, 0.63, 0.95, 0.63, 0.63,
];
const EX5_EDGES: [[usize; 2]; 10] = [
    [1, 2],
    [1, 3],
    [1, 8],
    [2, 4],
    [2, 5],
    [3, 4],
    [5, 6],
    [5, 8],
    [6, 7],
    [7, 8],
];
const EX5_SNR: [f64; 8] = [11.2, 10.6, 18.4, 13.4, 17.8, 11.2, 16.8, 10.9];
const EX5_MU: [f64; 8] = [1., 10., 1., 10., 1., 1., 1., 1.];

const COMPARED: [ProtocolKind; 4] = [
    ProtocolKind::Noncooperative,
    ProtocolKind::MsdAlg,
    ProtocolKind::LsAlg,
    ProtocolKind::Usup,
];

fn scaled(scale: f64, raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|x| scale * x).collect()
}

fn geometric((radius, seed): (f64, u64)) -> TopologySpec {
    TopologySpec::Geometric {
        nodes: 15,
        radius,
        seed,
    }
}

fn base(name: &str, description: &str, topology: TopologySpec) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        description: description.into(),
        topology,
        order: 50,
        snr_db: vec![],
        mu: vec![],
        beta: vec![],
        sigma_x2: 1.0,
        rule: RuleKind::Nlms,
        nlms_epsilon: 1e-6,
        sigma_q2: 0.0,
        protocols: COMPARED.to_vec(),
        combiner: CombinerRule::Uniform,
        usup: USupParams::default(),
        adaptive_diffusion: USupParams::default(),
        ls: LsParams::default(),
        msd: MsdParams::default(),
        iterations: 40_000,
        sweep_iterations: Some(120_000),
        ensemble_size: 100,
        master_seed: 1,
        steady_state_window: None,
        record_stride: 10,
        probe_iterations: vec![],
        checksum: false,
        feedback_grid: vec![],
        sigma_q2_grid: vec![],
    }
}

fn example1() -> ScenarioConfig {
    ScenarioConfig {
        snr_db: EX1_SNR.to_vec(),
        mu: scaled(0.1, &EX1_MU[..15]),
        sigma_q2: 5e-6,
        sigma_q2_grid: vec![1e-9, 1e-8, 5e-8, 1e-7, 1e-6, 5e-6],
        ..base(
            "example1",
            "White inputs; a -4.9 dB node with the largest strict degree (8).",
            geometric(EXAMPLE1_GRAPH),
        )
    }
}

fn example2() -> ScenarioConfig {
    ScenarioConfig {
        snr_db: EX2_SNR.to_vec(),
        mu: scaled(0.1, &EX23_MU),
        sigma_q2: 1e-7,
        sigma_q2_grid: vec![1e-9, 1e-8, 1e-7, 1e-6, 1e-5],
        ..base(
            "example2",
            "White inputs; the best node (22.5 dB) has a single link.",
            geometric(EXAMPLE2_GRAPH),
        )
    }
}

fn example3() -> ScenarioConfig {
    ScenarioConfig {
        snr_db: EX3_SNR.to_vec(),
        mu: scaled(0.1, &EX23_MU),
        beta: EX3_BETA.to_vec(),
        sigma_q2: 1e-7,
        sigma_q2_grid: vec![1e-9, 1e-8, 1e-7, 1e-6, 1e-5],
        ..base(
            "example3",
            "AR(1) inputs (beta 0.63 or 0.95) on a graph with near-uniform degrees.",
            geometric(EXAMPLE3_GRAPH),
        )
    }
}

fn example4() -> ScenarioConfig {
    let mut cfg = example3();
    cfg.name = "example4".into();
    cfg.description =
        "Example 3 data with a slow walk and no feedback; compare with `theory`.".into();
    cfg.sigma_q2 = 1e-10;
    cfg.sigma_q2_grid.clear();
    cfg.usup.feedback = FeedbackPeriod::Never;
    cfg.usup.mu_a = 5e-4;
    cfg.protocols = vec![ProtocolKind::Noncooperative, ProtocolKind::Usup];
    cfg
}

fn example5() -> ScenarioConfig {
    ScenarioConfig {
        order: 6,
        snr_db: EX5_SNR.to_vec(),
        mu: scaled(0.01, &EX5_MU),
        protocols: vec![ProtocolKind::Noncooperative, ProtocolKind::Usup],
        iterations: 20_000,
        ensemble_size: 200,
        record_stride: 1,
        sweep_iterations: None,
        probe_iterations: vec![
            100, 500, 1000, 2000, 4000, 6000, 8000, 12_000, 16_000, 19_999,
        ],
        checksum: true,
        ..base(
            "example5",
            "N=8, M=6 white-input network with a stationary plant; compare with `theory`.",
            TopologySpec::Edges {
                nodes: 8,
                edges: EX5_EDGES.to_vec(),
            },
        )
    }
}

fn example6() -> ScenarioConfig {
    ScenarioConfig {
        name: "example6".into(),
        description: "Example 5 network for sweeping the feedback period L.".into(),
        protocols: vec![ProtocolKind::Usup],
        probe_iterations: vec![],
        checksum: false,
        feedback_grid: [10, 100, 1000, 10_000, 100_000]
            .into_iter()
            .map(FeedbackPeriod::Every)
            .chain([FeedbackPeriod::Never])
            .collect(),
        ..example5()
    }
}

/// Shipped scenario by name.
pub fn shipped(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "example1" => example1(),
        "example2" => example2(),
        "example3" => example3(),
        "example4" => example4(),
        "example5" => example5(),
        "example6" => example6(),
        _ => return None,
    })
}

/// All shipped scenarios in order.
pub fn shipped_scenarios() -> Vec<ScenarioConfig> {
    SHIPPED.iter().filter_map(|n| shipped(n)).collect()
}
