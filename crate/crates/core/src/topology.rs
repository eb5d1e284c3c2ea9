//! Network graphs, neighborhoods and fixed combiner rules.
//!
//! Nodes are 0-based internally. The text edge-list format and scenario files
//! use 1-based indices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("a network needs at least one node")]
    Empty,
    #[error("node {node} is out of range for a {n_nodes}-node network")]
    NodeOutOfRange { node: usize, n_nodes: usize },
    #[error("explicit self-loop on node {0} (self-loops are implied)")]
    SelfLoop(usize),
    #[error("node {0} has no strict neighbors and cannot fuse")]
    IsolatedNode(usize),
    #[error("noise variance of node {node} must be positive, got {value}")]
    NonPositiveVariance { node: usize, value: f64 },
    #[error("expected {expected} per-node values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("combiner weight ({row}, {col}) is invalid: {message}")]
    InvalidWeight {
        row: usize,
        col: usize,
        message: String,
    },
}

/// Undirected graph with implied self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    n_nodes: usize,
    adjacency: Vec<bool>,
}

/// `𝒩_n` (including the node itself) and `𝒩̄_n = 𝒩_n \ {n}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub full: Vec<usize>,
    pub strict: Vec<usize>,
}

impl NetworkTopology {
    /// Graph with `n_nodes` nodes and no links.
    pub fn isolated(n_nodes: usize) -> Result<Self, TopologyError> {
        if n_nodes == 0 {
            return Err(TopologyError::Empty);
        }
        let mut adjacency = vec![false; n_nodes * n_nodes];
        for n in 0..n_nodes {
            adjacency[n * n_nodes + n] = true;
        }
        Ok(Self { n_nodes, adjacency })
    }

    /// Builds a graph from 0-based undirected edges. Duplicate edges are harmless.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut topo = Self::isolated(n_nodes)?;
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= n_nodes {
                    return Err(TopologyError::NodeOutOfRange { node, n_nodes });
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            topo.adjacency[a * n_nodes + b] = true;
            topo.adjacency[b * n_nodes + a] = true;
        }
        Ok(topo)
    }

    /// Same as [`from_edges`](Self::from_edges) with 1-based node labels.
    pub fn from_one_based_edges(
        n_nodes: usize,
        edges: &[[usize; 2]],
    ) -> Result<Self, TopologyError> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for &[a, b] in edges {
            for node in [a, b] {
                if node == 0 || node > n_nodes {
                    return Err(TopologyError::NodeOutOfRange { node, n_nodes });
                }
            }
            zero_based.push((a - 1, b - 1));
        }
        Self::from_edges(n_nodes, &zero_based)
    }

    /// Parses `u v` pairs (1-based), one per line. Blank lines and `#` comments are
    /// skipped. When `n_nodes` is `None` the largest label decides the size.
    pub fn parse_edge_list(text: &str, n_nodes: Option<usize>) -> Result<Self, TopologyError> {
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(TopologyError::Parse {
                    line,
                    message: format!("expected two node labels, found {}", fields.len()),
                });
            }
            let mut pair = [0usize; 2];
            for (slot, field) in pair.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|_| TopologyError::Parse {
                    line,
                    message: format!("'{field}' is not a node label"),
                })?;
                if *slot == 0 {
                    return Err(TopologyError::Parse {
                        line,
                        message: "labels are 1-based".into(),
                    });
                }
            }
            if pair[0] == pair[1] {
                return Err(TopologyError::SelfLoop(pair[0] - 1));
            }
            edges.push(pair);
        }
        let inferred = edges.iter().flatten().copied().max().unwrap_or(0);
        let n = n_nodes.unwrap_or(inferred);
        Self::from_one_based_edges(n, &edges)
    }

    /// Uniform points in the unit square, linked when closer than `radius`.
    /// Returns the graph and the node positions.
    pub fn random_geometric(
        n_nodes: usize,
        radius: f64,
        seed: u64,
    ) -> Result<(Self, Vec<[f64; 2]>), TopologyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<[f64; 2]> = (0..n_nodes)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let mut edges = Vec::new();
        for a in 0..n_nodes {
            for b in (a + 1)..n_nodes {
                let dx = positions[a][0] - positions[b][0];
                let dy = positions[a][1] - positions[b][1];
                if dx.hypot(dy) <= radius {
                    edges.push((a, b));
                }
            }
        }
        Ok((Self::from_edges(n_nodes, &edges)?, positions))
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_linked(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.n_nodes + b]
    }

    /// Row-major adjacency, diagonal set.
    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    /// `𝒩_n`, sorted, always containing `n`.
    pub fn neighborhood(&self, n: usize) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&l| self.is_linked(n, l))
            .collect()
    }

    /// `𝒩̄_n`, sorted.
    pub fn strict_neighborhood(&self, n: usize) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&l| l != n && self.is_linked(n, l))
            .collect()
    }

    pub fn neighborhoods(&self) -> Vec<Neighborhood> {
        (0..self.n_nodes)
            .map(|n| Neighborhood {
                full: self.neighborhood(n),
                strict: self.strict_neighborhood(n),
            })
            .collect()
    }

    /// `|𝒩_n|`, counting the node itself.
    pub fn degree(&self, n: usize) -> usize {
        (0..self.n_nodes).filter(|&l| self.is_linked(n, l)).count()
    }

    pub fn strict_degree(&self, n: usize) -> usize {
        self.degree(n) - 1
    }

    pub fn mean_degree(&self) -> f64 {
        (0..self.n_nodes)
            .map(|n| self.degree(n) as f64)
            .sum::<f64>()
            / self.n_nodes as f64
    }

    /// Undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n_nodes {
            for b in (a + 1)..self.n_nodes {
                if self.is_linked(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&n| self.strict_degree(n) == 0)
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for l in 0..self.n_nodes {
                if self.is_linked(n, l) && !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Weights over `𝒩_n`, self included.
    FullNeighborhood,
    /// Weights over `𝒩̄_n`, zero self-weight.
    StrictNeighborhood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerRule {
    #[default]
    Uniform,
    Metropolis,
    RelativeVariance,
}

/// Nonnegative N×N weight matrix, stored densely with a sparse row view.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerMatrix {
    n_nodes: usize,
    weights: Vec<f64>,
    mode: SupportMode,
    rows: Vec<Vec<(usize, f64)>>,
}

impl CombinerMatrix {
    fn from_rows(n_nodes: usize, mode: SupportMode, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut weights = vec![0.0; n_nodes * n_nodes];
        for (n, row) in rows.iter().enumerate() {
            for &(l, c) in row {
                weights[n * n_nodes + l] = c;
            }
        }
        Self {
            n_nodes,
            weights,
            mode,
            rows,
        }
    }

    /// Dense constructor for externally supplied weights (row-major).
    /// Zero entries are left out of the sparse rows.
    pub fn from_dense(
        n_nodes: usize,
        weights: Vec<f64>,
        mode: SupportMode,
    ) -> Result<Self, TopologyError> {
        if weights.len() != n_nodes * n_nodes {
            return Err(TopologyError::LengthMismatch {
                expected: n_nodes * n_nodes,
                got: weights.len(),
            });
        }
        let mut rows = Vec::with_capacity(n_nodes);
        for n in 0..n_nodes {
            let mut row = Vec::new();
            for l in 0..n_nodes {
                let c = weights[n * n_nodes + l];
                if !(c.is_finite() && c >= 0.0) {
                    return Err(TopologyError::InvalidWeight {
                        row: n,
                        col: l,
                        message: format!("{c} is not a finite nonnegative weight"),
                    });
                }
                if mode == SupportMode::StrictNeighborhood && n == l && c != 0.0 {
                    return Err(TopologyError::InvalidWeight {
                        row: n,
                        col: l,
                        message: "strict combiners have zero self-weight".into(),
                    });
                }
                if c != 0.0 {
                    row.push((l, c));
                }
            }
            rows.push(row);
        }
        Ok(Self::from_rows(n_nodes, mode, rows))
    }

    pub fn identity(n_nodes: usize) -> Self {
        let rows = (0..n_nodes).map(|n| vec![(n, 1.0)]).collect();
        Self::from_rows(n_nodes, SupportMode::FullNeighborhood, rows)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn mode(&self) -> SupportMode {
        self.mode
    }

    pub fn weight(&self, n: usize, l: usize) -> f64 {
        self.weights[n * self.n_nodes + l]
    }

    /// Row-major dense weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nonzero `(ℓ, c_{nℓ})` pairs of row `n`, ascending in `ℓ`.
    pub fn row(&self, n: usize) -> &[(usize, f64)] {
        &self.rows[n]
    }

    pub fn row_sum(&self, n: usize) -> f64 {
        self.rows[n].iter().map(|&(_, c)| c).sum()
    }

    pub fn column_sum(&self, l: usize) -> f64 {
        (0..self.n_nodes).map(|n| self.weight(n, l)).sum()
    }

    /// Rows with no weight at all (isolated nodes of a strict combiner built with fallback).
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&n| self.rows[n].is_empty())
            .collect()
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.n_nodes).all(|n| (self.row_sum(n) - 1.0).abs() <= tol)
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.is_row_stochastic(tol)
            && (0..self.n_nodes).all(|l| (self.column_sum(l) - 1.0).abs() <= tol)
    }

    /// True when every nonzero weight sits on a link of `topology`.
    pub fn respects(&self, topology: &NetworkTopology) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(n, row)| row.iter().all(|&(l, _)| topology.is_linked(n, l)))
    }
}

fn support(topology: &NetworkTopology, n: usize, mode: SupportMode) -> Vec<usize> {
    match mode {
        SupportMode::FullNeighborhood => topology.neighborhood(n),
        SupportMode::StrictNeighborhood => topology.strict_neighborhood(n),
    }
}

/// Normalizes raw positive scores over each node's support. Nodes with an empty
/// support either fail or get an empty row.
fn normalized_rows(
    topology: &NetworkTopology,
    mode: SupportMode,
    allow_isolated: bool,
    score: impl Fn(usize, usize) -> f64,
) -> Result<Vec<Vec<(usize, f64)>>, TopologyError> {
    let mut rows = Vec::with_capacity(topology.n_nodes());
    for n in 0..topology.n_nodes() {
        let sup = support(topology, n, mode);
        if sup.is_empty() {
            if allow_isolated {
                rows.push(Vec::new());
                continue;
            }
            return Err(TopologyError::IsolatedNode(n));
        }
        let raw: Vec<f64> = sup.iter().map(|&l| score(n, l)).collect();
        let total: f64 = raw.iter().sum();
        rows.push(
            sup.into_iter()
                .zip(raw)
                .map(|(l, s)| (l, s / total))
                .collect(),
        );
    }
    Ok(rows)
}

fn metropolis_rows(
    topology: &NetworkTopology,
    mode: SupportMode,
    allow_isolated: bool,
) -> Result<Vec<Vec<(usize, f64)>>, TopologyError> {
    let offdiag = |n: usize, l: usize| 1.0 / topology.degree(n).max(topology.degree(l)) as f64;
    match mode {
        SupportMode::StrictNeighborhood => normalized_rows(topology, mode, allow_isolated, offdiag),
        SupportMode::FullNeighborhood => Ok((0..topology.n_nodes())
            .map(|n| {
                let others: f64 = topology
                    .strict_neighborhood(n)
                    .iter()
                    .map(|&l| offdiag(n, l))
                    .sum();
                topology
                    .neighborhood(n)
                    .into_iter()
                    .map(|l| {
                        let c = if l == n { 1.0 - others } else { offdiag(n, l) };
                        (l, c)
                    })
                    .collect()
            })
            .collect()),
    }
}

fn check_variances(topology: &NetworkTopology, noise: &[f64]) -> Result<(), TopologyError> {
    if noise.len() != topology.n_nodes() {
        return Err(TopologyError::LengthMismatch {
            expected: topology.n_nodes(),
            got: noise.len(),
        });
    }
    for (node, &value) in noise.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(TopologyError::NonPositiveVariance { node, value });
        }
    }
    Ok(())
}

/// `c_{nℓ} = 1/|support|`.
pub fn build_uniform(
    topology: &NetworkTopology,
    mode: SupportMode,
) -> Result<CombinerMatrix, TopologyError> {
    let rows = normalized_rows(topology, mode, false, |_, _| 1.0)?;
    Ok(CombinerMatrix::from_rows(topology.n_nodes(), mode, rows))
}

/// Off-diagonal `1/max(|𝒩_n|, |𝒩_ℓ|)`; the diagonal takes the remainder in full
/// mode, and in strict mode the off-diagonal row is renormalized to one.
pub fn build_metropolis(
    topology: &NetworkTopology,
    mode: SupportMode,
) -> Result<CombinerMatrix, TopologyError> {
    let rows = metropolis_rows(topology, mode, false)?;
    Ok(CombinerMatrix::from_rows(topology.n_nodes(), mode, rows))
}

/// `c_{nℓ} ∝ 1/σ²_{v,ℓ}` over the support (weights follow the sending node).
pub fn build_relative_variance(
    topology: &NetworkTopology,
    noise_variances: &[f64],
    mode: SupportMode,
) -> Result<CombinerMatrix, TopologyError> {
    check_variances(topology, noise_variances)?;
    let rows = normalized_rows(topology, mode, false, |_, l| 1.0 / noise_variances[l])?;
    Ok(CombinerMatrix::from_rows(topology.n_nodes(), mode, rows))
}

impl CombinerRule {
    pub fn build(
        self,
        topology: &NetworkTopology,
        noise_variances: &[f64],
        mode: SupportMode,
    ) -> Result<CombinerMatrix, TopologyError> {
        match self {
            CombinerRule::Uniform => build_uniform(topology, mode),
            CombinerRule::Metropolis => build_metropolis(topology, mode),
            CombinerRule::RelativeVariance => {
                build_relative_variance(topology, noise_variances, mode)
            }
        }
    }

    /// Strict-mode combiner in which isolated nodes get an empty row instead of an
    /// error; protocols run those nodes non-cooperatively.
    pub fn build_strict_with_fallback(
        self,
        topology: &NetworkTopology,
        noise_variances: &[f64],
    ) -> Result<CombinerMatrix, TopologyError> {
        let mode = SupportMode::StrictNeighborhood;
        let rows = match self {
            CombinerRule::Uniform => normalized_rows(topology, mode, true, |_, _| 1.0)?,
            CombinerRule::Metropolis => metropolis_rows(topology, mode, true)?,
            CombinerRule::RelativeVariance => {
                check_variances(topology, noise_variances)?;
                normalized_rows(topology, mode, true, |_, l| 1.0 / noise_variances[l])?
            }
        };
        Ok(CombinerMatrix::from_rows(topology.n_nodes(), mode, rows))
    }
}
