use serde::{Deserialize, Serialize};

use super::{
    check_nodes, fuse, snapshot, Message, NodeState, Observations, Payload, Protocol,
    ProtocolError, ProtocolKind,
};
use crate::filters::LearningRule;
use crate::topology::CombinerMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionVariant {
    /// Combine neighbors' `ψ`, then adapt from the combination.
    CombineThenAdapt,
    /// Adapt from the own combined estimate, then combine the adapted estimates.
    AdaptThenCombine,
}

/// Diffusion LMS/NLMS with a fixed full-neighborhood combiner.
#[derive(Debug, Clone)]
pub struct Diffusion {
    variant: DiffusionVariant,
    order: usize,
    rules: Vec<LearningRule>,
    combiner: CombinerMatrix,
    nodes: Vec<NodeState>,
    shared: Vec<f64>,
    scored: Vec<f64>,
    log: Option<Vec<Message>>,
}

impl Diffusion {
    pub fn new(
        variant: DiffusionVariant,
        order: usize,
        rules: Vec<LearningRule>,
        combiner: CombinerMatrix,
    ) -> Result<Self, ProtocolError> {
        check_nodes(rules.len(), combiner.n_nodes())?;
        let n = rules.len();
        Ok(Self {
            variant,
            order,
            rules,
            combiner,
            nodes: (0..n).map(|_| NodeState::zeroed(order)).collect(),
            shared: vec![0.0; n * order],
            scored: vec![0.0; n * order],
            log: None,
        })
    }

    fn log_row(&mut self, i: usize, n: usize, payload: Payload) {
        if let Some(log) = self.log.as_mut() {
            for &(l, _) in self.combiner.row(n) {
                if l != n {
                    log.push(Message {
                        iteration: i,
                        from: l,
                        to: n,
                        payload,
                    });
                }
            }
        }
    }
}

impl Protocol for Diffusion {
    fn kind(&self) -> ProtocolKind {
        match self.variant {
            DiffusionVariant::CombineThenAdapt => ProtocolKind::DiffusionCta,
            DiffusionVariant::AdaptThenCombine => ProtocolKind::DiffusionAtc,
        }
    }

    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn step(&mut self, i: usize, obs: Observations<'_>) -> Result<(), ProtocolError> {
        check_nodes(self.nodes.len(), obs.n_nodes())?;
        let m = self.order;
        match self.variant {
            DiffusionVariant::CombineThenAdapt => {
                snapshot(self.nodes.iter().map(|s| &s.psi[..]), &mut self.shared, m);
                self.scored.copy_from_slice(&self.shared);
                for n in 0..self.nodes.len() {
                    self.log_row(i, n, Payload::LocalEstimate);
                    let node = &mut self.nodes[n];
                    fuse(self.combiner.row(n), &self.shared, m, &mut node.phi);
                    node.psi.copy_from_slice(&node.phi);
                    node.w.copy_from_slice(&node.psi);
                    self.rules[n].adapt(&mut node.psi, obs.regressor(n), obs.desired[n])?;
                }
            }
            DiffusionVariant::AdaptThenCombine => {
                for (n, node) in self.nodes.iter_mut().enumerate() {
                    self.scored[n * m..(n + 1) * m].copy_from_slice(&node.w);
                    node.psi.copy_from_slice(&node.w);
                    self.rules[n].adapt(&mut node.psi, obs.regressor(n), obs.desired[n])?;
                }
                snapshot(self.nodes.iter().map(|s| &s.psi[..]), &mut self.shared, m);
                for n in 0..self.nodes.len() {
                    self.log_row(i, n, Payload::IntermediateEstimate);
                    let node = &mut self.nodes[n];
                    fuse(self.combiner.row(n), &self.shared, m, &mut node.w);
                    node.phi.copy_from_slice(&node.w);
                }
            }
        }
        Ok(())
    }

    fn scored(&self, n: usize) -> &[f64] {
        &self.scored[n * self.order..(n + 1) * self.order]
    }

    fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    fn enable_message_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    fn messages(&self) -> &[Message] {
        self.log.as_deref().unwrap_or(&[])
    }
}
