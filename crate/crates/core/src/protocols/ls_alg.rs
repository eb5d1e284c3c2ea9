use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    check_nodes, snapshot, Message, NodeState, Observations, Payload, Protocol, ProtocolError,
    ProtocolKind,
};
use crate::filters::LearningRule;
use crate::topology::NetworkTopology;
use crate::vecops::{dot, dot_diff};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsParams {
    /// Forgetting factor of the exponentially weighted cost.
    pub gamma: f64,
    /// Diagonal loading of the normal equations.
    pub epsilon: f64,
}

impl Default for LsParams {
    fn default() -> Self {
        Self {
            gamma: 0.9999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct LsNode {
    strict: Vec<usize>,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    residuals: DVector<f64>,
    coefficients: DVector<f64>,
}

/// Affine combination of the local estimate with neighbors' outputs,
/// `w = ψ + Σ c_ℓ (w_ℓ − ψ)`, with `c` solving an exponentially weighted
/// least-squares fit of the local error. The local filter adapts on its own;
/// only outputs cross links.
#[derive(Debug, Clone)]
pub struct LsAlg {
    order: usize,
    rules: Vec<LearningRule>,
    params: LsParams,
    nodes: Vec<NodeState>,
    solvers: Vec<LsNode>,
    previous: Vec<f64>,
    log: Option<Vec<Message>>,
}

impl LsAlg {
    pub fn new(
        order: usize,
        rules: Vec<LearningRule>,
        topology: &NetworkTopology,
        params: LsParams,
    ) -> Result<Self, ProtocolError> {
        check_nodes(rules.len(), topology.n_nodes())?;
        if !(params.gamma > 0.0 && params.gamma <= 1.0) || params.epsilon < 0.0 {
            return Err(ProtocolError::InvalidParameter(format!(
                "LS-alg needs gamma in (0, 1] and epsilon >= 0, got {} and {}",
                params.gamma, params.epsilon
            )));
        }
        let n = rules.len();
        let solvers = (0..n)
            .map(|k| {
                let strict = topology.strict_neighborhood(k);
                let s = strict.len();
                LsNode {
                    strict,
                    gram: DMatrix::zeros(s, s),
                    cross: DVector::zeros(s),
                    residuals: DVector::zeros(s),
                    coefficients: DVector::zeros(s),
                }
            })
            .collect();
        Ok(Self {
            order,
            rules,
            params,
            nodes: (0..n).map(|_| NodeState::zeroed(order)).collect(),
            solvers,
            previous: vec![0.0; n * order],
            log: None,
        })
    }

    /// Latest affine coefficients of node `n`, aligned with its sorted strict neighborhood.
    pub fn coefficients(&self, n: usize) -> &[f64] {
        self.solvers[n].coefficients.as_slice()
    }
}

impl Protocol for LsAlg {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::LsAlg
    }

    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn step(&mut self, i: usize, obs: Observations<'_>) -> Result<(), ProtocolError> {
        check_nodes(self.nodes.len(), obs.n_nodes())?;
        let m = self.order;
        let LsParams { gamma, epsilon } = self.params;
        snapshot(self.nodes.iter().map(|s| &s.w[..]), &mut self.previous, m);

        for n in 0..self.nodes.len() {
            let u = obs.regressor(n);
            let d = obs.desired[n];
            let solver = &mut self.solvers[n];
            let node = &mut self.nodes[n];

            if solver.strict.is_empty() {
                node.w.copy_from_slice(&node.psi);
            } else {
                if let Some(log) = self.log.as_mut() {
                    log.extend(solver.strict.iter().map(|&l| Message {
                        iteration: i,
                        from: l,
                        to: n,
                        payload: Payload::OutputEstimate,
                    }));
                }
                let e = d - dot(u, &node.psi);
                for (j, &l) in solver.strict.iter().enumerate() {
                    solver.residuals[j] =
                        dot_diff(u, &self.previous[l * m..(l + 1) * m], &node.psi);
                }
                solver.gram *= gamma;
                solver
                    .gram
                    .ger(1.0, &solver.residuals, &solver.residuals, 1.0);
                solver.cross *= gamma;
                solver.cross.axpy(e, &solver.residuals, 1.0);

                solver.coefficients = solve_loaded(&solver.gram, &solver.cross, epsilon).ok_or(
                    ProtocolError::SingularSystem {
                        node: n,
                        iteration: i,
                    },
                )?;

                node.w.copy_from_slice(&node.psi);
                for (j, &l) in solver.strict.iter().enumerate() {
                    let c = solver.coefficients[j];
                    let other = &self.previous[l * m..(l + 1) * m];
                    for ((w, o), p) in node.w.iter_mut().zip(other).zip(&node.psi) {
                        *w += c * (o - p);
                    }
                }
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

/// Solves `(P + εI) c = z` for symmetric PSD `P`.
///
/// Cholesky is used while the system is numerically well posed. Once the
/// eigenvalue spread of `P` exceeds what double precision resolves, the part of
/// `z` along the unresolved directions is round-off, and dividing it by a tiny
/// `ε` would inject large spurious coefficients. The fallback therefore solves
/// through the eigendecomposition with eigenvalues floored at
/// `max(ε, n·ε_mach·λ_max)`, the usual pseudo-inverse tolerance.
fn solve_loaded(gram: &DMatrix<f64>, cross: &DVector<f64>, epsilon: f64) -> Option<DVector<f64>> {
    let n = gram.nrows();
    let mut loaded = gram.clone();
    for j in 0..n {
        loaded[(j, j)] += epsilon;
    }
    if let Some(chol) = loaded.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
        let condition = (hi / lo).powi(2);
        if condition * n as f64 * f64::EPSILON < 1e-3 {
            let c = chol.solve(cross);
            return c.iter().all(|x| x.is_finite()).then_some(c);
        }
    }
    if epsilon <= 0.0 && gram.iter().all(|&x| x == 0.0) {
        return None;
    }
    let eig = loaded.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let floor = epsilon.max(n as f64 * f64::EPSILON * top);
    if !(floor > 0.0) {
        return None;
    }
    let mut proj = eig.eigenvectors.tr_mul(cross);
    for (x, lambda) in proj.iter_mut().zip(eig.eigenvalues.iter()) {
        *x /= lambda.max(floor);
    }
    let c = &eig.eigenvectors * proj;
    c.iter().all(|x| x.is_finite()).then_some(c)
}
