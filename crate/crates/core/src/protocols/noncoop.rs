use super::{check_nodes, NodeState, Observations, Protocol, ProtocolError, ProtocolKind};
use crate::filters::LearningRule;

/// Every node runs its filter alone. `w` mirrors `ψ_{n,i-1}` for scoring.
#[derive(Debug, Clone)]
pub struct Noncooperative {
    rules: Vec<LearningRule>,
    nodes: Vec<NodeState>,
}

impl Noncooperative {
    pub fn new(order: usize, rules: Vec<LearningRule>) -> Self {
        let nodes = (0..rules.len()).map(|_| NodeState::zeroed(order)).collect();
        Self { rules, nodes }
    }
}

impl Protocol for Noncooperative {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Noncooperative
    }

    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn step(&mut self, _i: usize, obs: Observations<'_>) -> Result<(), ProtocolError> {
        check_nodes(self.nodes.len(), obs.n_nodes())?;
        for (n, (node, rule)) in self.nodes.iter_mut().zip(&self.rules).enumerate() {
            node.w.copy_from_slice(&node.psi);
            rule.adapt(&mut node.psi, obs.regressor(n), obs.desired[n])?;
        }
        Ok(())
    }

    fn scored(&self, n: usize) -> &[f64] {
        &self.nodes[n].w
    }

    fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }
}
