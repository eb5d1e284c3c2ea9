use super::supervisor::{mix, sigmoid, update_mixing, USupParams};
use super::{
    check_nodes, fuse, snapshot, Message, NodeState, Observations, Payload, Protocol,
    ProtocolError, ProtocolKind,
};
use crate::filters::LearningRule;
use crate::topology::{CombinerMatrix, SupportMode};
use crate::vecops::{dot, dot_diff};

/// Adaptive diffusion: the mix `w = λψ + (1−λ)φ` of the local estimate and the
/// fusion of neighbors' `ψ` is fed back into the local filter at every step.
/// `λ` follows the same sigmoid supervisor as U-sup, without truncation; the
/// feedback period of the parameters is ignored.
#[derive(Debug, Clone)]
pub struct AdaptiveDiffusion {
    order: usize,
    rules: Vec<LearningRule>,
    combiner: CombinerMatrix,
    params: USupParams,
    nodes: Vec<NodeState>,
    shared: Vec<f64>,
    log: Option<Vec<Message>>,
}

impl AdaptiveDiffusion {
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
                "adaptive diffusion fuses over strict neighborhoods".into(),
            ));
        }
        let n = rules.len();
        Ok(Self {
            order,
            rules,
            combiner,
            params,
            nodes: (0..n).map(|_| NodeState::zeroed(order)).collect(),
            shared: vec![0.0; n * order],
            log: None,
        })
    }
}

impl Protocol for AdaptiveDiffusion {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::AdaptiveDiffusion
    }

    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn step(&mut self, i: usize, obs: Observations<'_>) -> Result<(), ProtocolError> {
        check_nodes(self.nodes.len(), obs.n_nodes())?;
        let m = self.order;
        let params = self.params;
        snapshot(self.nodes.iter().map(|s| &s.psi[..]), &mut self.shared, m);

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
                        payload: Payload::LocalEstimate,
                    }));
                }
                node.lambda = params.pin_lambda.unwrap_or_else(|| sigmoid(node.a));
                node.lambda_check = node.lambda;
                fuse(row, &self.shared, m, &mut node.phi);
                mix(node.lambda, &node.psi, &node.phi, &mut node.w);
                if params.pin_lambda.is_none() {
                    let e = d - dot(u, &node.w);
                    let y = dot_diff(u, &node.psi, &node.phi);
                    update_mixing(node, &params, y, e);
                }
            }
            node.psi.copy_from_slice(&node.w);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::IterationData;
    use crate::protocols::{Diffusion, DiffusionVariant, Noncooperative};
    use crate::topology::{build_uniform, NetworkTopology};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(pin: f64) -> (AdaptiveDiffusion, CombinerMatrix, Vec<LearningRule>) {
        let topo =
            NetworkTopology::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let c = build_uniform(&topo, SupportMode::StrictNeighborhood).unwrap();
        let rules = vec![
            LearningRule::nlms(0.2),
            LearningRule::nlms(0.02),
            LearningRule::lms(0.01),
            LearningRule::nlms(0.5),
        ];
        let params = USupParams {
            pin_lambda: Some(pin),
            ..USupParams::default()
        };
        let ad = AdaptiveDiffusion::new(3, rules.clone(), c.clone(), params).unwrap();
        (ad, c, rules)
    }

    fn drive(rng: &mut ChaCha8Rng, data: &mut IterationData) {
        for x in data.regressors.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        for d in data.desired.iter_mut() {
            *d = rng.random_range(-1.0..1.0);
        }
    }

    #[test]
    fn pinned_one_is_noncooperative() {
        let (mut ad, _, rules) = setup(1.0);
        let mut alone = Noncooperative::new(3, rules);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut data = IterationData::new(4, 3);
        for i in 0..500 {
            drive(&mut rng, &mut data);
            ad.step(i, data.observations()).unwrap();
            alone.step(i, data.observations()).unwrap();
            for n in 0..4 {
                assert_eq!(ad.scored(n), alone.scored(n));
            }
        }
    }

    #[test]
    fn pinned_zero_is_cta_without_self_weight() {
        let (mut ad, c, rules) = setup(0.0);
        let mut cta = Diffusion::new(DiffusionVariant::CombineThenAdapt, 3, rules, c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut data = IterationData::new(4, 3);
        for i in 0..500 {
            drive(&mut rng, &mut data);
            ad.step(i, data.observations()).unwrap();
            cta.step(i, data.observations()).unwrap();
            for n in 0..4 {
                assert_eq!(ad.nodes()[n].psi, cta.nodes()[n].psi);
            }
        }
    }
}
