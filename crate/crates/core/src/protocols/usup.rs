use super::supervisor::{mix, sigmoid, truncated_lambda, update_mixing, USupParams};
use super::{
    check_nodes, fuse, snapshot, Message, NodeState, Observations, Payload, Protocol,
    ProtocolError, ProtocolKind,
};
use crate::filters::LearningRule;
use crate::topology::{CombinerMatrix, SupportMode};
use crate::vecops::{dot, dot_diff};

/// Supervised cooperation: every node keeps an independent local filter `ψ`,
/// shares only its supervisor output `w`, and mixes `ψ` with the fusion `φ` of
/// its strict neighbors' outputs. Every `L` iterations `w` is copied into `ψ`.
///
/// Nodes with an empty combiner row run alone with `λ̌ = 1`.
#[derive(Debug, Clone)]
pub struct USup {
    order: usize,
    rules: Vec<LearningRule>,
    combiner: CombinerMatrix,
    params: USupParams,
    nodes: Vec<NodeState>,
    prev_outputs: Vec<f64>,
    log: Option<Vec<Message>>,
}

impl USup {
    /// `combiner` must be a strict-neighborhood matrix (empty rows allowed).
    pub fn new(
        order: usize,
        rules: Vec<LearningRule>,
        combiner: CombinerMatrix,
        params: USupParams,
    ) -> Result<Self, ProtocolError> {
        check_nodes(rules.len(), combiner.n_nodes())?;
        params.validate()?;
        if combiner.mode() != SupportMode::StrictNeighborhood {
            return Err(ProtocolError::InvalidParameter(
                "the supervisor fuses over strict neighborhoods".into(),
            ));
        }
        let n = rules.len();
        Ok(Self {
            order,
            rules,
            combiner,
            params,
            nodes: (0..n).map(|_| NodeState::zeroed(order)).collect(),
            prev_outputs: vec![0.0; n * order],
            log: None,
        })
    }

    pub fn params(&self) -> &USupParams {
        &self.params
    }

    pub fn combiner(&self) -> &CombinerMatrix {
        &self.combiner
    }

    /// Outputs `w_{ℓ,i-1}` of all nodes as read during the last step (row-major).
    pub fn previous_outputs(&self) -> &[f64] {
        &self.prev_outputs
    }
}

impl Protocol for USup {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Usup
    }

    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn step(&mut self, i: usize, obs: Observations<'_>) -> Result<(), ProtocolError> {
        check_nodes(self.nodes.len(), obs.n_nodes())?;
        let m = self.order;
        let params = self.params;
        snapshot(
            self.nodes.iter().map(|s| &s.w[..]),
            &mut self.prev_outputs,
            m,
        );
        let transfer = params.feedback.is_transfer(i);

        for n in 0..self.nodes.len() {
            let row = self.combiner.row(n);
            let u = obs.regressor(n);
            let d = obs.desired[n];
            let node = &mut self.nodes[n];

            if row.is_empty() {
                node.lambda = 1.0;
                node.lambda_check = 1.0;
                node.phi.copy_from_slice(&node.psi);
                node.w.copy_from_slice(&node.psi);
            } else {
                if let Some(log) = self.log.as_mut() {
                    log.extend(row.iter().map(|&(l, _)| Message {
                        iteration: i,
                        from: l,
                        to: n,
                        payload: Payload::OutputEstimate,
                    }));
                }
                match params.pin_lambda {
                    Some(pin) => {
                        node.lambda = pin;
                        node.lambda_check = pin;
                    }
                    None => {
                        node.lambda = sigmoid(node.a);
                        node.lambda_check = truncated_lambda(node.a, node.lambda, params.a_plus);
                    }
                }
                fuse(row, &self.prev_outputs, m, &mut node.phi);
                mix(node.lambda_check, &node.psi, &node.phi, &mut node.w);
                if params.pin_lambda.is_none() {
                    let e = d - dot(u, &node.w);
                    let y = dot_diff(u, &node.psi, &node.phi);
                    update_mixing(node, &params, y, e);
                }
            }

            if transfer {
                node.psi.copy_from_slice(&node.w);
            }
            self.rules[n].adapt(&mut node.psi, u, d)?;
        }
        Ok(())
    }

    fn scored(&self, n: usize) -> &[f64] {
        &self.nodes[n].w
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
