use serde::{Deserialize, Serialize};

use super::{
    check_nodes, snapshot, Message, NodeState, Observations, Payload, Protocol, ProtocolError,
    ProtocolKind,
};
use crate::filters::LearningRule;
use crate::topology::NetworkTopology;
use crate::vecops::{axpy, dot, scale_into};

/// Step-size rule for the combiner gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsdStepSchedule {
    /// `κ / (ε + tr Q)`: NLMS-style normalization by the energy of the
    /// neighborhood's estimate increments (after Takahashi, Yamada and Sayed,
    /// "Diffusion least-mean squares with adaptive combiners", IEEE TSP 2010).
    #[default]
    NormalizedTrace,
    /// Constant `κ`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsdParams {
    pub kappa: f64,
    pub epsilon: f64,
    pub schedule: MsdStepSchedule,
}

impl Default for MsdParams {
    fn default() -> Self {
        Self {
            kappa: 1e-5,
            epsilon: 1e-3,
            schedule: MsdStepSchedule::NormalizedTrace,
        }
    }
}

impl MsdParams {
    /// Step size given the increment Gram matrix `q` (row-major, `k×k`).
    pub fn step_size(&self, q: &[f64], k: usize) -> f64 {
        match self.schedule {
            MsdStepSchedule::NormalizedTrace => {
                let trace: f64 = (0..k).map(|j| q[j * k + j]).sum();
                self.kappa / (self.epsilon + trace)
            }
            MsdStepSchedule::Fixed => self.kappa,
        }
    }
}

/// Diffusion with combiners adapted to minimize the fused estimate's MSD,
/// using the Gram matrix of consecutive estimate increments as a proxy.
/// Combiner vectors run over full neighborhoods and keep `𝟙ᵀc = 1`.
#[derive(Debug, Clone)]
pub struct MsdAlg {
    order: usize,
    rules: Vec<LearningRule>,
    hoods: Vec<Vec<usize>>,
    params: MsdParams,
    nodes: Vec<NodeState>,
    combiners: Vec<Vec<f64>>,
    current: Vec<f64>,
    older: Vec<f64>,
    increments: Vec<f64>,
    gram: Vec<f64>,
    grad: Vec<f64>,
    log: Option<Vec<Message>>,
}

impl MsdAlg {
    /// Combiners start uniform over each full neighborhood.
    pub fn new(
        order: usize,
        rules: Vec<LearningRule>,
        topology: &NetworkTopology,
        params: MsdParams,
    ) -> Result<Self, ProtocolError> {
        check_nodes(rules.len(), topology.n_nodes())?;
        if !(params.kappa >= 0.0 && params.epsilon >= 0.0) {
            return Err(ProtocolError::InvalidParameter(
                "MSD-alg kappa and epsilon must be nonnegative".into(),
            ));
        }
        let n = rules.len();
        let hoods: Vec<Vec<usize>> = (0..n).map(|k| topology.neighborhood(k)).collect();
        let combiners = hoods
            .iter()
            .map(|h| vec![1.0 / h.len() as f64; h.len()])
            .collect();
        let widest = hoods.iter().map(Vec::len).max().unwrap_or(1);
        Ok(Self {
            order,
            rules,
            hoods,
            params,
            nodes: (0..n).map(|_| NodeState::zeroed(order)).collect(),
            combiners,
            current: vec![0.0; n * order],
            older: vec![0.0; n * order],
            increments: vec![0.0; n * order],
            gram: vec![0.0; widest * widest],
            grad: vec![0.0; widest],
            log: None,
        })
    }

    /// Combiner weights of node `n`, aligned with its sorted full neighborhood.
    pub fn combiner(&self, n: usize) -> &[f64] {
        &self.combiners[n]
    }

    pub fn neighborhood(&self, n: usize) -> &[usize] {
        &self.hoods[n]
    }
}

impl Protocol for MsdAlg {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::MsdAlg
    }

    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn step(&mut self, i: usize, obs: Observations<'_>) -> Result<(), ProtocolError> {
        check_nodes(self.nodes.len(), obs.n_nodes())?;
        let m = self.order;
        snapshot(self.nodes.iter().map(|s| &s.psi[..]), &mut self.current, m);
        for ((inc, cur), old) in self
            .increments
            .iter_mut()
            .zip(&self.current)
            .zip(&self.older)
        {
            *inc = cur - old;
        }

        for n in 0..self.nodes.len() {
            let hood = &self.hoods[n];
            let k = hood.len();
            if let Some(log) = self.log.as_mut() {
                log.extend(hood.iter().filter(|&&l| l != n).map(|&l| Message {
                    iteration: i,
                    from: l,
                    to: n,
                    payload: Payload::LocalEstimate,
                }));
            }
            let gram = &mut self.gram[..k * k];
            for a in 0..k {
                let da = &self.increments[hood[a] * m..(hood[a] + 1) * m];
                for b in a..k {
                    let db = &self.increments[hood[b] * m..(hood[b] + 1) * m];
                    let v = dot(da, db);
                    gram[a * k + b] = v;
                    gram[b * k + a] = v;
                }
            }

            let c = &mut self.combiners[n];
            let node = &mut self.nodes[n];
            scale_into(
                c[0],
                &self.current[hood[0] * m..(hood[0] + 1) * m],
                &mut node.phi,
            );
            for (j, &l) in hood.iter().enumerate().skip(1) {
                axpy(c[j], &self.current[l * m..(l + 1) * m], &mut node.phi);
            }
            node.w.copy_from_slice(&node.phi);
            node.psi.copy_from_slice(&node.phi);
            self.rules[n].adapt(&mut node.psi, obs.regressor(n), obs.desired[n])?;

            // c ← c − μ (I − 𝟙𝟙ᵀ/k) Q c
            let grad = &mut self.grad[..k];
            for (a, g) in grad.iter_mut().enumerate() {
                *g = dot(&gram[a * k..(a + 1) * k], c);
            }
            let mean = grad.iter().sum::<f64>() / k as f64;
            let mu = self.params.step_size(gram, k);
            for (cj, g) in c.iter_mut().zip(grad.iter()) {
                *cj -= mu * (g - mean);
            }
        }
        std::mem::swap(&mut self.older, &mut self.current);
        Ok(())
    }

    fn scored(&self, n: usize) -> &[f64] {
        &self.nodes[n].phi
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::IterationData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net() -> NetworkTopology {
        NetworkTopology::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]).unwrap()
    }

    #[test]
    fn combiner_sums_stay_one() {
        let params = MsdParams {
            kappa: 0.5,
            ..MsdParams::default()
        };
        let rules = vec![LearningRule::nlms(0.4); 5];
        let mut alg = MsdAlg::new(3, rules, &net(), params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = IterationData::new(5, 3);
        let mut moved = false;
        for i in 0..3000 {
            for x in data.regressors.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
            for (n, d) in data.desired.iter_mut().enumerate() {
                *d = rng.random_range(-1.0..1.0) * (n as f64 + 0.1);
            }
            alg.step(i, data.observations()).unwrap();
            for n in 0..5 {
                let sum: f64 = alg.combiner(n).iter().sum();
                assert!((sum - 1.0).abs() < 1e-10, "node {n}: {sum}");
                let k = alg.neighborhood(n).len();
                moved |= alg
                    .combiner(n)
                    .iter()
                    .any(|&c| (c - 1.0 / k as f64).abs() > 1e-3);
            }
        }
        assert!(moved, "combiners never adapted");
    }

    #[test]
    fn frozen_estimates_freeze_combiners() {
        let rules = vec![LearningRule::lms(0.0); 5];
        let params = MsdParams {
            kappa: 1.0,
            schedule: MsdStepSchedule::Fixed,
            ..MsdParams::default()
        };
        let mut alg = MsdAlg::new(2, rules, &net(), params).unwrap();
        for node in alg.nodes.iter_mut() {
            node.psi = vec![0.3, -0.1];
        }
        alg.older.copy_from_slice(&[0.3, -0.1].repeat(5));
        let before: Vec<Vec<f64>> = (0..5).map(|n| alg.combiner(n).to_vec()).collect();
        let data = IterationData::new(5, 2);
        for i in 0..10 {
            alg.step(i, data.observations()).unwrap();
        }
        for n in 0..5 {
            assert_eq!(alg.combiner(n), &before[n][..]);
        }
    }

    #[test]
    fn first_step_scores_zero_estimate() {
        let mut alg = MsdAlg::new(
            2,
            vec![LearningRule::nlms(0.5); 5],
            &net(),
            MsdParams::default(),
        )
        .unwrap();
        let mut data = IterationData::new(5, 2);
        data.regressors.fill(1.0);
        data.desired.fill(1.0);
        alg.step(0, data.observations()).unwrap();
        for n in 0..5 {
            assert_eq!(alg.scored(n), &[0.0, 0.0]);
        }
    }
}
