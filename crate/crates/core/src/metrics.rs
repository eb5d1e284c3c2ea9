//! Error metrics, steady-state estimates and robustness sweeps.
//!
//! Everything accumulates in linear scale as ensemble sums; [`to_db`] is the
//! only conversion to decibels.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocols::{EstimateKind, ProtocolKind};
use crate::simrunner::{run_scenario, ScenarioConfig, SimError};
use crate::vecops::{dot, sq_dist};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("steady-state window of {window} iterations exceeds the {iterations}-iteration trace")]
    WindowTooLong { window: usize, iterations: usize },
    #[error("empty steady-state window")]
    EmptyWindow,
    #[error("cannot merge traces of different shapes")]
    ShapeMismatch,
    #[error("robustness sweep needs at least one sigma_q2 value")]
    EmptyGrid,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("sigma_q2 = {sigma_q2}: {source}")]
    Run {
        sigma_q2: f64,
        #[source]
        source: SimError,
    },
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Default steady-state window: last 10% of the run, at least 500 iterations,
/// capped at the run length.
pub fn default_window(iterations: usize) -> usize {
    (iterations / 10).max(500).min(iterations)
}

/// Per-node time series, summed over runs and block-averaged over `stride`
/// consecutive iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries {
    n_nodes: usize,
    iterations: usize,
    stride: usize,
    runs: u64,
    sums: Vec<f64>,
}

impl NodeSeries {
    pub fn new(n_nodes: usize, iterations: usize, stride: usize) -> Self {
        let stride = stride.max(1);
        let points = iterations.div_ceil(stride);
        Self {
            n_nodes,
            iterations,
            stride,
            runs: 0,
            sums: vec![0.0; points * n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn runs(&self) -> u64 {
        self.runs
    }

    pub fn points(&self) -> usize {
        self.iterations.div_ceil(self.stride)
    }

    /// First iteration covered by `point`.
    pub fn point_start(&self, point: usize) -> usize {
        point * self.stride
    }

    fn point_len(&self, point: usize) -> usize {
        self.stride.min(self.iterations - point * self.stride)
    }

    #[inline]
    pub fn add(&mut self, node: usize, i: usize, value: f64) {
        self.sums[(i / self.stride) * self.n_nodes + node] += value;
    }

    pub fn close_run(&mut self) {
        self.runs += 1;
    }

    pub fn merge(&mut self, other: &NodeSeries) -> Result<(), MetricsError> {
        if (self.n_nodes, self.iterations, self.stride)
            != (other.n_nodes, other.iterations, other.stride)
        {
            return Err(MetricsError::ShapeMismatch);
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.runs += other.runs;
        Ok(())
    }

    /// Ensemble and block mean at `point`.
    pub fn mean(&self, node: usize, point: usize) -> f64 {
        self.sums[point * self.n_nodes + node] / (self.runs as f64 * self.point_len(point) as f64)
    }

    pub fn network_mean(&self, point: usize) -> f64 {
        (0..self.n_nodes).map(|n| self.mean(n, point)).sum::<f64>() / self.n_nodes as f64
    }

    /// Mean of `node` over iterations `[start, end)`, rounded outward to whole blocks.
    pub fn range_mean(&self, node: usize, start: usize, end: usize) -> Result<f64, MetricsError> {
        if end > self.iterations {
            return Err(MetricsError::WindowTooLong {
                window: end - start.min(end),
                iterations: self.iterations,
            });
        }
        let (first, last) = (start / self.stride, end.div_ceil(self.stride));
        if first >= last || self.runs == 0 {
            return Err(MetricsError::EmptyWindow);
        }
        let (mut total, mut count) = (0.0, 0usize);
        for point in first..last {
            total += self.sums[point * self.n_nodes + node];
            count += self.point_len(point);
        }
        Ok(total / (self.runs as f64 * count as f64))
    }

    /// Per-node mean over the final `window` iterations, linear scale.
    pub fn tail_mean(&self, window: usize) -> Result<Vec<f64>, MetricsError> {
        if window > self.iterations {
            return Err(MetricsError::WindowTooLong {
                window,
                iterations: self.iterations,
            });
        }
        let start = self.iterations - window;
        (0..self.n_nodes)
            .map(|n| self.range_mean(n, start, self.iterations))
            .collect()
    }
}

/// Ensemble MSD, EMSE and MSE per node and iteration for one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub protocol: ProtocolKind,
    pub scored_on: EstimateKind,
    msd: NodeSeries,
    emse: NodeSeries,
    mse: NodeSeries,
}

impl MetricsTrace {
    pub fn new(protocol: ProtocolKind, n_nodes: usize, iterations: usize, stride: usize) -> Self {
        let series = NodeSeries::new(n_nodes, iterations, stride);
        Self {
            protocol,
            scored_on: protocol.scored_on(),
            msd: series.clone(),
            emse: series.clone(),
            mse: series,
        }
    }

    /// Adds one node's errors at iteration `i`: deviation from `plant` (`w^o_i`),
    /// a-priori excess error against `clean = u·w^o_{i-1}`, and the error against `d`.
    #[inline]
    pub fn record(
        &mut self,
        node: usize,
        i: usize,
        estimate: &[f64],
        plant: &[f64],
        u: &[f64],
        clean: f64,
        d: f64,
    ) {
        let y = dot(u, estimate);
        self.msd.add(node, i, sq_dist(plant, estimate));
        self.emse.add(node, i, (clean - y) * (clean - y));
        self.mse.add(node, i, (d - y) * (d - y));
    }

    pub fn close_run(&mut self) {
        self.msd.close_run();
        self.emse.close_run();
        self.mse.close_run();
    }

    pub fn merge(&mut self, other: &MetricsTrace) -> Result<(), MetricsError> {
        if self.protocol != other.protocol {
            return Err(MetricsError::ShapeMismatch);
        }
        self.msd.merge(&other.msd)?;
        self.emse.merge(&other.emse)?;
        self.mse.merge(&other.mse)
    }

    pub fn n_nodes(&self) -> usize {
        self.msd.n_nodes()
    }

    pub fn iterations(&self) -> usize {
        self.msd.iterations()
    }

    pub fn ensemble_size(&self) -> u64 {
        self.msd.runs()
    }

    pub fn msd(&self) -> &NodeSeries {
        &self.msd
    }

    pub fn emse(&self) -> &NodeSeries {
        &self.emse
    }

    pub fn mse(&self) -> &NodeSeries {
        &self.mse
    }

    /// Network MSD per recorded point, dB.
    pub fn network_msd_db(&self) -> Vec<f64> {
        (0..self.msd.points())
            .map(|p| to_db(self.msd.network_mean(p)))
            .collect()
    }

    /// Per-node steady-state MSD in dB over the final `window` iterations.
    pub fn steady_state(&self, window: usize) -> Result<Vec<f64>, MetricsError> {
        Ok(self.msd.tail_mean(window)?.into_iter().map(to_db).collect())
    }

    pub fn steady_state_default(&self) -> Result<Vec<f64>, MetricsError> {
        self.steady_state(default_window(self.iterations()))
    }

    /// Worst node's MSD (dB) averaged over `[start, start + len)`, each node averaged separately.
    pub fn worst_node_window(&self, start: usize, len: usize) -> Result<f64, MetricsError> {
        let mut worst = f64::NEG_INFINITY;
        for n in 0..self.n_nodes() {
            worst = worst.max(self.msd.range_mean(n, start, start + len)?);
        }
        Ok(to_db(worst))
    }

    /// Columns `iter, node, msd_db, emse_db, mse_db`; `iter` is the first
    /// iteration of each recorded block.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "node", "msd_db", "emse_db", "mse_db"])?;
        for p in 0..self.msd.points() {
            let iter = self.msd.point_start(p).to_string();
            for n in 0..self.n_nodes() {
                w.write_record([
                    iter.clone(),
                    (n + 1).to_string(),
                    format_db(self.msd.mean(n, p)),
                    format_db(self.emse.mean(n, p)),
                    format_db(self.mse.mean(n, p)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn format_db(linear: f64) -> String {
    format!("{:.6}", to_db(linear))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStat {
    /// Worst node.
    Max,
    /// Best node.
    Min,
}

impl SweepStat {
    pub fn name(self) -> &'static str {
        match self {
            SweepStat::Max => "max",
            SweepStat::Min => "min",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_q2: f64,
    pub protocol: ProtocolKind,
    pub stat: SweepStat,
    pub msd_db: f64,
}

/// Best- and worst-node steady-state MSD for each protocol and `σ²_q`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, sigma_q2: f64, protocol: ProtocolKind, stat: SweepStat) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.sigma_q2 == sigma_q2 && r.protocol == protocol && r.stat == stat)
            .map(|r| r.msd_db)
    }

    pub fn grid(&self) -> Vec<f64> {
        let mut grid: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !grid.contains(&r.sigma_q2) {
                grid.push(r.sigma_q2);
            }
        }
        grid
    }

    /// Columns `sigma_q2, protocol, stat, msd_db`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sigma_q2", "protocol", "stat", "msd_db"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:e}", r.sigma_q2),
                r.protocol.name().to_string(),
                r.stat.name().to_string(),
                format!("{:.6}", r.msd_db),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `config` once per `σ²_q` in `grid` (with `config.protocols` replaced by
/// `protocols` when non-empty) and tabulates steady-state extremes over nodes.
pub fn robustness_sweep(
    config: &ScenarioConfig,
    protocols: &[ProtocolKind],
    grid: &[f64],
    window: Option<usize>,
) -> Result<SweepTable, SweepError> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid.into());
    }
    let mut table = SweepTable::default();
    for &sigma_q2 in grid {
        let mut cfg = config.sweep_point(sigma_q2);
        if !protocols.is_empty() {
            cfg.protocols = protocols.to_vec();
        }
        let result = run_scenario(&cfg).map_err(|source| SweepError::Run { sigma_q2, source })?;
        let window = window.unwrap_or_else(|| cfg.steady_window());
        for trace in result.traces.values() {
            let steady = trace.steady_state(window)?;
            let max = steady.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = steady.iter().copied().fold(f64::INFINITY, f64::min);
            for (stat, msd_db) in [(SweepStat::Max, max), (SweepStat::Min, min)] {
                table.rows.push(SweepRow {
                    sigma_q2,
                    protocol: trace.protocol,
                    stat,
                    msd_db,
                });
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_estimate_has_zero_deviation() {
        let mut t = MetricsTrace::new(ProtocolKind::Usup, 1, 1, 1);
        let plant = [0.3, -0.2];
        t.record(0, 0, &plant, &plant, &[1.0, 1.0], 0.1, 0.1);
        t.close_run();
        assert_eq!(t.msd().mean(0, 0), 0.0);
    }

    #[test]
    fn zero_estimate_against_unit_plant_is_zero_db() {
        let mut t = MetricsTrace::new(ProtocolKind::Noncooperative, 1, 1, 1);
        let plant = [0.6, 0.8];
        t.record(0, 0, &[0.0, 0.0], &plant, &[1.0, 0.0], 0.6, 0.6);
        t.close_run();
        assert_relative_eq!(to_db(t.msd().mean(0, 0)), 0.0, epsilon = 1e-12);
    }

    /// For white regressors, the excess error averages to `‖e_w‖² σ²_u`.
    #[test]
    fn emse_matches_weighted_deviation() {
        let sigma_u2: f64 = 2.0;
        let plant = [0.5, -1.0, 0.25];
        let estimate = [0.1, -0.7, 0.6];
        let draws = 100_000;
        let mut t = MetricsTrace::new(ProtocolKind::Usup, 1, draws, draws);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for i in 0..draws {
            let u: Vec<f64> = (0..3)
                .map(|_| sigma_u2.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let clean = dot(&u, &plant);
            t.record(0, i, &estimate, &plant, &u, clean, clean);
        }
        t.close_run();
        let expected = sigma_u2 * sq_dist(&plant, &estimate);
        let got = t.emse().mean(0, 0);
        assert!(
            (got - expected).abs() < 0.02 * expected,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn constant_trace_steady_state() {
        let mut s = NodeSeries::new(2, 1000, 7);
        for i in 0..1000 {
            s.add(0, i, 0.01);
            s.add(1, i, 4.0);
        }
        s.close_run();
        let tail = s.tail_mean(500).unwrap();
        assert_relative_eq!(to_db(tail[0]), -20.0, epsilon = 1e-9);
        assert_relative_eq!(to_db(tail[1]), 10.0 * 4f64.log10(), epsilon = 1e-9);
    }

    #[test]
    fn full_window_on_decay_sits_above_tail() {
        let mut t = MetricsTrace::new(ProtocolKind::Noncooperative, 1, 2000, 1);
        let plant = [1.0];
        for i in 0..2000 {
            let est = [1.0 - 0.999f64.powi(i as i32)];
            t.record(0, i, &est, &plant, &[0.0], 0.0, 0.0);
        }
        t.close_run();
        let full = t.steady_state(2000).unwrap()[0];
        let tail = t.steady_state(500).unwrap()[0];
        assert!(full > tail);
    }

    #[test]
    fn window_longer_than_trace_is_rejected() {
        let mut s = NodeSeries::new(1, 100, 1);
        s.close_run();
        assert!(matches!(
            s.tail_mean(101),
            Err(MetricsError::WindowTooLong {
                window: 101,
                iterations: 100
            })
        ));
    }

    #[test]
    fn default_window_rule() {
        assert_eq!(default_window(20_000), 2000);
        assert_eq!(default_window(3000), 500);
        assert_eq!(default_window(300), 300);
    }

    #[test]
    fn worst_node_window_takes_per_node_averages() {
        let mut t = MetricsTrace::new(ProtocolKind::Usup, 2, 20, 1);
        let plant = [0.0];
        for i in 0..20 {
            let a = if i < 10 { 1.0 } else { 0.1 };
            let b = if i < 10 { 0.1 } else { 1.0 };
            t.record(0, i, &[a], &plant, &[0.0], 0.0, 0.0);
            t.record(1, i, &[b], &plant, &[0.0], 0.0, 0.0);
        }
        t.close_run();
        let expected = to_db((10.0 * 1.0 + 10.0 * 0.01) / 20.0);
        assert_relative_eq!(
            t.worst_node_window(0, 20).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_relative_eq!(t.worst_node_window(0, 10).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_layout() {
        let mut t = MetricsTrace::new(ProtocolKind::Usup, 2, 4, 2);
        for i in 0..4 {
            for n in 0..2 {
                t.record(n, i, &[0.0], &[1.0], &[1.0], 1.0, 1.0);
            }
        }
        t.close_run();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,node,msd_db,emse_db,mse_db");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert_eq!(lines[3], "2,1,0.000000,0.000000,0.000000");
    }

    proptest! {
        /// Merging per-run traces in any order gives the same ensemble average.
        #[test]
        fn merge_is_order_independent(
            values in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 12), 2..8),
            seed in 0u64..1000,
        ) {
            let build = |v: &Vec<f64>| {
                let mut s = NodeSeries::new(3, 4, 1);
                for (k, x) in v.iter().enumerate() {
                    s.add(k % 3, k / 3, *x);
                }
                s.close_run();
                s
            };
            let runs: Vec<NodeSeries> = values.iter().map(build).collect();
            let mut forward = NodeSeries::new(3, 4, 1);
            for r in &runs {
                forward.merge(r).unwrap();
            }
            let mut order: Vec<usize> = (0..runs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for k in (1..order.len()).rev() {
                order.swap(k, rng.random_range(0..=k));
            }
            let mut shuffled = NodeSeries::new(3, 4, 1);
            for &k in &order {
                shuffled.merge(&runs[k]).unwrap();
            }
            for n in 0..3 {
                for p in 0..4 {
                    prop_assert!((forward.mean(n, p) - shuffled.mean(n, p)).abs() <= 1e-12);
                }
            }
        }
    }
}
