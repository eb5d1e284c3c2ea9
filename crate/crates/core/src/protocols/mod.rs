//! Network-wide iterations of every cooperation strategy.
//!
//! All protocols are synchronous: at iteration `i` each node reads its
//! neighbors' iteration-`i-1` quantities from a snapshot, then every node writes.
//! Nodes start from `ψ = w = 0`, `a = 0` (so `λ = 0.5`) and `p = 0`.

mod adaptive_diffusion;
mod complexity;
mod diffusion;
mod ls_alg;
mod msd_alg;
mod noncoop;
mod supervisor;
mod usup;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::datagen::Observations;
pub use adaptive_diffusion::AdaptiveDiffusion;
pub use complexity::{multiplication_count, CountedAlgorithm};
pub use diffusion::{Diffusion, DiffusionVariant};
pub use ls_alg::{LsAlg, LsParams};
pub use msd_alg::{MsdAlg, MsdParams, MsdStepSchedule};
pub use noncoop::Noncooperative;
pub use supervisor::{sigmoid, truncated_lambda, FeedbackPeriod, USupParams};
pub use usup::USup;

use crate::filters::FilterError;
use crate::topology::TopologyError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(
        "regularized LS solve failed at node {node}, iteration {iteration} (check epsilon_ls)"
    )]
    SingularSystem { node: usize, iteration: usize },
    #[error("expected {expected} nodes, got {got}")]
    NodeCountMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Per-node state; not every protocol uses every field.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    /// Local estimate `ψ_{n,i}`.
    pub psi: Vec<f64>,
    /// Output estimate `w_{n,i}`.
    pub w: Vec<f64>,
    /// Fused neighborhood estimate `φ_{n,i}`.
    pub phi: Vec<f64>,
    pub a: f64,
    pub lambda: f64,
    pub lambda_check: f64,
    pub p: f64,
}

impl NodeState {
    pub fn zeroed(order: usize) -> Self {
        Self {
            psi: vec![0.0; order],
            w: vec![0.0; order],
            phi: vec![0.0; order],
            a: 0.0,
            lambda: 0.5,
            lambda_check: 0.5,
            p: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Noncooperative,
    DiffusionCta,
    DiffusionAtc,
    AdaptiveDiffusion,
    MsdAlg,
    LsAlg,
    Usup,
}

/// Which estimate a protocol is scored on at iteration `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    /// `ψ_{n,i-1}`
    LocalPrevious,
    /// `φ_{n,i-1}`
    FusedPrevious,
    /// ATC diffusion's combined estimate from the previous iteration.
    CombinedPrevious,
    /// `w_{n,i}`, built from iteration `i-1` quantities before `d_n(i)` is used
    /// (LS-alg's combiner does use `d_n(i)`).
    Output,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 7] = [
        ProtocolKind::Noncooperative,
        ProtocolKind::DiffusionCta,
        ProtocolKind::DiffusionAtc,
        ProtocolKind::AdaptiveDiffusion,
        ProtocolKind::MsdAlg,
        ProtocolKind::LsAlg,
        ProtocolKind::Usup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Noncooperative => "noncooperative",
            ProtocolKind::DiffusionCta => "diffusion_cta",
            ProtocolKind::DiffusionAtc => "diffusion_atc",
            ProtocolKind::AdaptiveDiffusion => "adaptive_diffusion",
            ProtocolKind::MsdAlg => "msd_alg",
            ProtocolKind::LsAlg => "ls_alg",
            ProtocolKind::Usup => "usup",
        }
    }

    pub fn scored_on(self) -> EstimateKind {
        match self {
            ProtocolKind::Noncooperative | ProtocolKind::DiffusionCta => {
                EstimateKind::LocalPrevious
            }
            ProtocolKind::DiffusionAtc => EstimateKind::CombinedPrevious,
            ProtocolKind::MsdAlg => EstimateKind::FusedPrevious,
            ProtocolKind::AdaptiveDiffusion | ProtocolKind::LsAlg | ProtocolKind::Usup => {
                EstimateKind::Output
            }
        }
    }

    pub fn is_cooperative(self) -> bool {
        self != ProtocolKind::Noncooperative
    }
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProtocolKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown protocol '{s}'"))
    }
}

/// What travels over a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    /// A node's local filter estimate `ψ`.
    LocalEstimate,
    /// ATC diffusion's intermediate (just adapted) estimate.
    IntermediateEstimate,
    /// A supervisor / combiner output `w`.
    OutputEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
    pub payload: Payload,
}

/// One cooperation strategy running over the whole network.
pub trait Protocol: Send {
    fn kind(&self) -> ProtocolKind;

    fn n_nodes(&self) -> usize;

    /// Advances every node from iteration `i-1` to `i`.
    fn step(&mut self, i: usize, obs: Observations<'_>) -> Result<(), ProtocolError>;

    /// Estimate of node `n` scored at the iteration just stepped.
    fn scored(&self, n: usize) -> &[f64];

    fn nodes(&self) -> &[NodeState];

    /// Starts recording every link transfer.
    fn enable_message_log(&mut self) {}

    fn messages(&self) -> &[Message] {
        &[]
    }
}

pub(crate) fn check_nodes(expected: usize, got: usize) -> Result<(), ProtocolError> {
    if expected == got {
        Ok(())
    } else {
        Err(ProtocolError::NodeCountMismatch { expected, got })
    }
}

/// `out = Σ_ℓ c_ℓ x_ℓ` over a sparse row; the first term is assigned, not
/// accumulated, so a single unit weight copies exactly.
#[inline]
pub(crate) fn fuse(row: &[(usize, f64)], flat: &[f64], order: usize, out: &mut [f64]) {
    let mut terms = row.iter();
    match terms.next() {
        Some(&(l, c)) => crate::vecops::scale_into(c, &flat[l * order..(l + 1) * order], out),
        None => out.fill(0.0),
    }
    for &(l, c) in terms {
        crate::vecops::axpy(c, &flat[l * order..(l + 1) * order], out);
    }
}

pub(crate) fn snapshot<'a>(nodes: impl Iterator<Item = &'a [f64]>, flat: &mut [f64], order: usize) {
    for (n, v) in nodes.enumerate() {
        flat[n * order..(n + 1) * order].copy_from_slice(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_names_round_trip() {
        for kind in ProtocolKind::ALL {
            assert_eq!(kind.name().parse::<ProtocolKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        assert!("nope".parse::<ProtocolKind>().is_err());
    }

    #[test]
    fn fuse_single_unit_weight_copies() {
        let flat = [1.0, -0.0, 3.5, 7.0];
        let mut out = [9.0; 2];
        fuse(&[(1, 1.0)], &flat, 2, &mut out);
        assert_eq!(out, [3.5, 7.0]);
        fuse(&[(0, 0.5), (1, 0.5)], &flat, 2, &mut out);
        assert_eq!(out, [2.25, 3.5]);
    }
}
