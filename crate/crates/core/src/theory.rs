//! Deterministic mean and mean-square model of U-sup.
//!
//! Tracks `T = E w̃w̃ᵀ`, `S = E w̃ψ̃ᵀ`, `K = E ψ̃ψ̃ᵀ` (all `MN×MN`, deviations
//! measured against the drifting plant), the mean deviations, and the expected
//! supervisor variables `ā`, `p̄`, `λ̄`. Products with `G = C ⊗ I_M` and with
//! block-diagonal matrices are done blockwise, never densely.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::RuleKind;
use crate::metrics::{format_db, NodeSeries};
use crate::protocols::{sigmoid, USupParams};
use crate::topology::{CombinerMatrix, SupportMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("model state became non-finite at iteration {iteration}")]
    NonFiniteState { iteration: usize },
    #[error("NLMS second-order model needs filter order above 2, got {0}")]
    OrderTooSmall(usize),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("the supervised model fuses over strict neighborhoods")]
    NotStrict,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Everything the model needs about a network.
#[derive(Debug, Clone)]
pub struct TheoryInputs {
    pub order: usize,
    pub rule: RuleKind,
    pub mu: Vec<f64>,
    /// Regressor covariance per node, `M×M`.
    pub covariances: Vec<DMatrix<f64>>,
    pub noise_variances: Vec<f64>,
    pub sigma_q2: f64,
    /// Initial plant `w^o_{-1}`; all estimates start at zero.
    pub initial: Vec<f64>,
    /// Strict-neighborhood combiner; empty rows mark isolated nodes.
    pub combiner: CombinerMatrix,
    pub usup: USupParams,
}

impl TheoryInputs {
    pub fn n_nodes(&self) -> usize {
        self.mu.len()
    }

    fn validate(&self) -> Result<(), TheoryError> {
        let n = self.n_nodes();
        let m = self.order;
        for got in [
            self.covariances.len(),
            self.noise_variances.len(),
            self.combiner.n_nodes(),
        ] {
            if got != n {
                return Err(TheoryError::LengthMismatch { expected: n, got });
            }
        }
        if self.initial.len() != m {
            return Err(TheoryError::LengthMismatch {
                expected: m,
                got: self.initial.len(),
            });
        }
        if let Some(r) = self.covariances.iter().find(|r| r.shape() != (m, m)) {
            return Err(TheoryError::LengthMismatch {
                expected: m,
                got: r.nrows(),
            });
        }
        if self.combiner.mode() != SupportMode::StrictNeighborhood {
            return Err(TheoryError::NotStrict);
        }
        if self.rule == RuleKind::Nlms && m <= 2 {
            return Err(TheoryError::OrderTooSmall(m));
        }
        self.usup
            .validate()
            .map_err(|e| TheoryError::InvalidParameter(e.to_string()))
    }
}

/// Model state after some iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryState {
    pub t: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub a_bar: Vec<f64>,
    pub p_bar: Vec<f64>,
    /// `λ̄` used in the latest step.
    pub lambda_bar: Vec<f64>,
    /// `E w̃` and `E ψ̃`.
    pub mean_w: DVector<f64>,
    pub mean_psi: DVector<f64>,
}

impl TheoryState {
    /// `tr(B_n T B_nᵀ)` per node.
    pub fn predicted_msd(&self, order: usize) -> Vec<f64> {
        block_traces(&self.t, order)
    }

    pub fn network_msd(&self, order: usize) -> f64 {
        let per = self.predicted_msd(order);
        per.iter().sum::<f64>() / per.len() as f64
    }
}

/// Diagonal-block traces of a block matrix.
pub fn block_traces(x: &DMatrix<f64>, order: usize) -> Vec<f64> {
    let n = x.nrows() / order;
    (0..n)
        .map(|b| (0..order).map(|j| x[(b * order + j, b * order + j)]).sum())
        .collect()
}

#[derive(Debug, Clone)]
pub struct TheoryModel {
    inputs: TheoryInputs,
    state: TheoryState,
    /// `R_μ` blocks and `I − R_μ` blocks.
    r_mu: Vec<DMatrix<f64>>,
    one_minus_r_mu: Vec<DMatrix<f64>>,
    isolated: Vec<bool>,
    steps: usize,
}

impl TheoryModel {
    pub fn new(inputs: TheoryInputs) -> Result<Self, TheoryError> {
        inputs.validate()?;
        let n = inputs.n_nodes();
        let m = inputs.order;
        let r_mu: Vec<DMatrix<f64>> = (0..n)
            .map(|k| {
                let r = &inputs.covariances[k];
                match inputs.rule {
                    RuleKind::Lms => r * inputs.mu[k],
                    RuleKind::Nlms => r * (inputs.mu[k] / (m as f64 * r[(0, 0)])),
                }
            })
            .collect();
        let one_minus_r_mu = r_mu.iter().map(|b| DMatrix::identity(m, m) - b).collect();

        let w0 = DVector::from_column_slice(&inputs.initial);
        let stacked = DVector::from_fn(n * m, |r, _| w0[r % m]);
        let outer = &stacked * stacked.transpose();
        let isolated: Vec<bool> = (0..n).map(|k| inputs.combiner.row(k).is_empty()).collect();
        let lambda_bar = (0..n)
            .map(|k| initial_lambda(&inputs.usup, isolated[k], 0.0))
            .collect();
        let state = TheoryState {
            t: outer.clone(),
            s: outer.clone(),
            k: outer,
            a_bar: vec![0.0; n],
            p_bar: vec![0.0; n],
            lambda_bar,
            mean_w: stacked.clone(),
            mean_psi: stacked,
        };
        Ok(Self {
            inputs,
            state,
            r_mu,
            one_minus_r_mu,
            isolated,
            steps: 0,
        })
    }

    pub fn state(&self) -> &TheoryState {
        &self.state
    }

    pub fn inputs(&self) -> &TheoryInputs {
        &self.inputs
    }

    pub fn iteration(&self) -> usize {
        self.steps
    }

    /// Advances the model by one network iteration.
    pub fn step(&mut self) -> Result<(), TheoryError> {
        let i = self.steps;
        let n = self.inputs.n_nodes();
        let m = self.inputs.order;
        let params = self.inputs.usup;
        let transfer = params.feedback.is_transfer(i);

        let lambda: Vec<f64> = (0..n)
            .map(|k| initial_lambda(&params, self.isolated[k], self.state.a_bar[k]))
            .collect();

        let c = &self.inputs.combiner;
        let gt = g_left(c, &self.state.t, m);
        let gtg = g_right_t(c, &gt, m);
        let gs = g_left(c, &self.state.s, m);

        // Supervisor statistics from the previous covariances.
        for k in 0..n {
            if self.isolated[k] || params.pin_lambda.is_some() {
                continue;
            }
            let r = &self.inputs.covariances[k];
            let tr_gtg = trace_product(r, &gtg, k, m);
            let tr_gs = trace_product(r, &gs, k, m);
            let tr_k = trace_product(r, &self.state.k, k, m);
            let p = &mut self.state.p_bar[k];
            *p = params.nu * *p + (1.0 - params.nu) * (tr_gtg - 2.0 * tr_gs + tr_k);
            let mu_a = params.mu_a / (*p + params.epsilon_p);
            let l = lambda[k];
            let drive = l * tr_gs + (1.0 - l) * tr_gtg - l * tr_k - (1.0 - l) * tr_gs;
            let a = self.state.a_bar[k] + mu_a * l * (1.0 - l) * drive;
            self.state.a_bar[k] = a.clamp(-params.a_plus, params.a_plus);
        }

        // T_i = D G T Gᵀ D + D G S Λ + Λ Sᵀ Gᵀ D + Λ K Λ + 𝒬, with D = I − Λ.
        let rest: Vec<f64> = lambda.iter().map(|l| 1.0 - l).collect();
        let mut t_new = gtg;
        scale_rows(&mut t_new, &rest, m);
        scale_cols(&mut t_new, &rest, m);
        let mut cross = gs.clone();
        scale_rows(&mut cross, &rest, m);
        scale_cols(&mut cross, &lambda, m);
        t_new += &cross;
        t_new += cross.transpose();
        let mut lkl = self.state.k.clone();
        scale_rows(&mut lkl, &lambda, m);
        scale_cols(&mut lkl, &lambda, m);
        t_new += lkl;
        add_drift(&mut t_new, self.inputs.sigma_q2, m);

        let (s_new, k_new) = if transfer {
            (self.state.t.clone(), self.state.t.clone())
        } else {
            // S_i = [D G S + Λ K](I − R_μ) + 𝒬
            let mut s_new = gs;
            scale_rows(&mut s_new, &rest, m);
            let mut lk = self.state.k.clone();
            scale_rows(&mut lk, &lambda, m);
            s_new += lk;
            let mut s_new = block_diag_right(&s_new, &self.one_minus_r_mu, m);
            add_drift(&mut s_new, self.inputs.sigma_q2, m);
            (s_new, self.k_recursion())
        };

        // Mean deviations.
        let mut mean_w = g_left_vec(c, &self.state.mean_w, m);
        for k in 0..n {
            for j in 0..m {
                let r = k * m + j;
                mean_w[r] = rest[k] * mean_w[r] + lambda[k] * self.state.mean_psi[r];
            }
        }
        let mean_psi = if transfer {
            self.state.mean_w.clone()
        } else {
            block_diag_left_vec(&self.one_minus_r_mu, &self.state.mean_psi, m)
        };

        self.state.t = symmetrized(t_new);
        self.state.s = s_new;
        self.state.k = symmetrized(k_new);
        self.state.mean_w = mean_w;
        self.state.mean_psi = mean_psi;
        self.state.lambda_bar = lambda;
        self.steps += 1;

        let finite = |x: &DMatrix<f64>| x.iter().all(|v| v.is_finite());
        if !(finite(&self.state.t) && finite(&self.state.s) && finite(&self.state.k))
            || !self.state.a_bar.iter().all(|a| a.is_finite())
        {
            return Err(TheoryError::NonFiniteState { iteration: i });
        }
        Ok(())
    }

    /// Local-filter covariance without transfer.
    fn k_recursion(&self) -> DMatrix<f64> {
        let m = self.inputs.order;
        let k_old = &self.state.k;
        let left = block_diag_left(&self.one_minus_r_mu, k_old, m);
        let mut k_new = block_diag_right(&left, &self.one_minus_r_mu, m);
        for node in 0..self.inputs.n_nodes() {
            let r = &self.inputs.covariances[node];
            let mu = self.inputs.mu[node];
            let sigma_v2 = self.inputs.noise_variances[node];
            let block = k_old.view((node * m, node * m), (m, m));
            let extra = match self.inputs.rule {
                // Gaussian fourth moment: E[uᵀu K uᵀu] = 2RKR + tr(RK)R. Cross-node
                // blocks involve independent regressors and get no extra term.
                RuleKind::Lms => {
                    let rmu = &self.r_mu[node];
                    let tr_rk = (r * block).trace();
                    rmu * block * rmu + r * (mu * mu * (tr_rk + sigma_v2))
                }
                RuleKind::Nlms => {
                    let sigma_u2 = r[(0, 0)];
                    let mf = m as f64;
                    r * (mu * mu * sigma_v2 / (mf * (mf - 2.0) * sigma_u2 * sigma_u2))
                }
            };
            let mut target = k_new.view_mut((node * m, node * m), (m, m));
            target += extra;
        }
        add_drift(&mut k_new, self.inputs.sigma_q2, m);
        k_new
    }

    /// Runs `iterations` steps from the current state, block-averaging over `stride`.
    pub fn run(&mut self, iterations: usize, stride: usize) -> Result<TheoryTrace, TheoryError> {
        let n = self.inputs.n_nodes();
        let m = self.inputs.order;
        let mut msd = NodeSeries::new(n, iterations, stride);
        let mut emse = NodeSeries::new(n, iterations, stride);
        let mut lambda = NodeSeries::new(n, iterations, stride);
        for i in 0..iterations {
            self.step()?;
            let per = self.state.predicted_msd(m);
            for k in 0..n {
                msd.add(k, i, per[k]);
                emse.add(
                    k,
                    i,
                    trace_product(&self.inputs.covariances[k], &self.state.t, k, m),
                );
                lambda.add(k, i, self.state.lambda_bar[k]);
            }
        }
        for s in [&mut msd, &mut emse, &mut lambda] {
            s.close_run();
        }
        Ok(TheoryTrace {
            msd,
            emse,
            lambda_bar: lambda,
            noise_variances: self.inputs.noise_variances.clone(),
        })
    }
}

fn initial_lambda(params: &USupParams, isolated: bool, a: f64) -> f64 {
    if isolated {
        1.0
    } else {
        params.pin_lambda.unwrap_or_else(|| sigmoid(a))
    }
}

/// Predicted curves in the same layout as simulated traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryTrace {
    pub msd: NodeSeries,
    /// `tr(R_n T_nn)`.
    pub emse: NodeSeries,
    pub lambda_bar: NodeSeries,
    pub noise_variances: Vec<f64>,
}

impl TheoryTrace {
    pub fn network_msd_db(&self) -> Vec<f64> {
        (0..self.msd.points())
            .map(|p| crate::metrics::to_db(self.msd.network_mean(p)))
            .collect()
    }

    /// Columns `iter, node, msd_db, emse_db, mse_db, lambda_bar, source`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), crate::metrics::MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iter",
            "node",
            "msd_db",
            "emse_db",
            "mse_db",
            "lambda_bar",
            "source",
        ])?;
        for p in 0..self.msd.points() {
            for k in 0..self.msd.n_nodes() {
                let emse = self.emse.mean(k, p);
                w.write_record([
                    self.msd.point_start(p).to_string(),
                    (k + 1).to_string(),
                    format_db(self.msd.mean(k, p)),
                    format_db(emse),
                    format_db(emse + self.noise_variances[k]),
                    format!("{:.6}", self.lambda_bar.mean(k, p)),
                    "theory".to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `tr(R · X_nn)` for the `n`-th diagonal block.
fn trace_product(r: &DMatrix<f64>, x: &DMatrix<f64>, n: usize, m: usize) -> f64 {
    let mut total = 0.0;
    for a in 0..m {
        for b in 0..m {
            total += r[(a, b)] * x[(n * m + b, n * m + a)];
        }
    }
    total
}

/// `(C ⊗ I) X`.
fn g_left(c: &CombinerMatrix, x: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let rows = x.nrows();
    let mut y = DMatrix::zeros(rows, x.ncols());
    for col in 0..x.ncols() {
        let src = x.column(col);
        let mut dst = y.column_mut(col);
        for n in 0..c.n_nodes() {
            for &(l, weight) in c.row(n) {
                for j in 0..m {
                    dst[n * m + j] += weight * src[l * m + j];
                }
            }
        }
    }
    y
}

fn g_left_vec(c: &CombinerMatrix, x: &DVector<f64>, m: usize) -> DVector<f64> {
    let mut y = DVector::zeros(x.len());
    for n in 0..c.n_nodes() {
        for &(l, weight) in c.row(n) {
            for j in 0..m {
                y[n * m + j] += weight * x[l * m + j];
            }
        }
    }
    y
}

/// `X (C ⊗ I)ᵀ`.
fn g_right_t(c: &CombinerMatrix, x: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(x.nrows(), x.ncols());
    for n in 0..c.n_nodes() {
        for &(l, weight) in c.row(n) {
            for j in 0..m {
                let mut dst = y.column_mut(n * m + j);
                dst.axpy(weight, &x.column(l * m + j), 1.0);
            }
        }
    }
    y
}

fn scale_rows(x: &mut DMatrix<f64>, factors: &[f64], m: usize) {
    for (n, &f) in factors.iter().enumerate() {
        x.rows_mut(n * m, m).scale_mut(f);
    }
}

fn scale_cols(x: &mut DMatrix<f64>, factors: &[f64], m: usize) {
    for (n, &f) in factors.iter().enumerate() {
        x.columns_mut(n * m, m).scale_mut(f);
    }
}

fn block_diag_left(blocks: &[DMatrix<f64>], x: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(x.nrows(), x.ncols());
    for (n, b) in blocks.iter().enumerate() {
        y.rows_mut(n * m, m).copy_from(&(b * x.rows(n * m, m)));
    }
    y
}

fn block_diag_left_vec(blocks: &[DMatrix<f64>], x: &DVector<f64>, m: usize) -> DVector<f64> {
    let mut y = DVector::zeros(x.len());
    for (n, b) in blocks.iter().enumerate() {
        y.rows_mut(n * m, m).copy_from(&(b * x.rows(n * m, m)));
    }
    y
}

fn block_diag_right(x: &DMatrix<f64>, blocks: &[DMatrix<f64>], m: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(x.nrows(), x.ncols());
    for (n, b) in blocks.iter().enumerate() {
        y.columns_mut(n * m, m)
            .copy_from(&(x.columns(n * m, m) * b));
    }
    y
}

/// Adds `σ²_q (𝟙𝟙ᵀ ⊗ I_M)`: the plant increment is common to every node.
fn add_drift(x: &mut DMatrix<f64>, sigma_q2: f64, m: usize) {
    if sigma_q2 == 0.0 {
        return;
    }
    let blocks = x.nrows() / m;
    for a in 0..blocks {
        for b in 0..blocks {
            for j in 0..m {
                x[(a * m + j, b * m + j)] += sigma_q2;
            }
        }
    }
}

fn symmetrized(x: DMatrix<f64>) -> DMatrix<f64> {
    (&x + x.transpose()) * 0.5
}

/// Mean-stability summary of the fusion recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `1 − 1/(1 + e^{a₊})`.
    pub eta: f64,
    /// Smallest admissible `λ̄`.
    pub lambda_min: f64,
    /// `ρ((I − Λ)C)` at `λ̄ ≡ lambda_min`.
    pub spectral_radius: f64,
}

impl StabilityReport {
    pub fn holds(&self) -> bool {
        self.spectral_radius <= self.eta + 1e-9
    }
}

/// `ρ((I − Λ) C)`. Equal to `ρ((I − Λ ⊗ I)(C ⊗ I))`, since the Kronecker factor
/// only repeats eigenvalues.
pub fn fusion_spectral_radius(c: &CombinerMatrix, lambda: &[f64]) -> f64 {
    let n = c.n_nodes();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        for &(l, w) in c.row(k) {
            a[(k, l)] = (1.0 - lambda[k]) * w;
        }
    }
    spectral_radius(&a)
}

/// Largest eigenvalue modulus. Uses a real Schur form with a bounded number of
/// sweeps; if that does not converge, falls back to `‖A^(2^k)‖^(2^-k)` by
/// normalized repeated squaring.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let sweeps = 200 * a.nrows().max(1);
    if let Some(schur) = a.clone().try_schur(f64::EPSILON, sweeps) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    squaring_radius(a)
}

fn squaring_radius(a: &DMatrix<f64>) -> f64 {
    let mut b = a.clone();
    let mut log_radius = 0.0;
    let mut weight = 1.0;
    for _ in 0..60 {
        let scale = b.norm();
        if scale == 0.0 {
            return 0.0;
        }
        b /= scale;
        log_radius += weight * scale.ln();
        weight *= 0.5;
        b = &b * &b;
    }
    (log_radius + weight * b.norm().ln()).exp()
}

/// Worst-case mean contraction of the fused recursion for `a ∈ [−a₊, a₊]`.
pub fn mean_stability_bound(c: &CombinerMatrix, a_plus: f64) -> StabilityReport {
    let lambda_min = sigmoid(-a_plus);
    let lambda = vec![lambda_min; c.n_nodes()];
    StabilityReport {
        eta: 1.0 - lambda_min,
        lambda_min,
        spectral_radius: fusion_spectral_radius(c, &lambda),
    }
}
