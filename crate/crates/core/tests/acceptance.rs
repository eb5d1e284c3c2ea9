//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when the
//! checks pass. `cargo test --test acceptance -- 3 7` runs a subset.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use adanet::cli::complexity_table;
use adanet::datagen::{DataGenerator, IterationData, NodeDataConfig, PlantModel};
use adanet::metrics::{robustness_sweep, SweepStat};
use adanet::protocols::{
    multiplication_count, CountedAlgorithm, Diffusion, DiffusionVariant, Noncooperative, Protocol,
};
use adanet::simrunner::shipped;
use adanet::theory::{fusion_spectral_radius, mean_stability_bound, TheoryInputs, TheoryModel};
use adanet::topology::{
    build_metropolis, build_relative_variance, build_uniform, CombinerMatrix, CombinerRule,
    NetworkTopology, SupportMode,
};
use adanet::{
    run_scenario, FeedbackPeriod, LearningRule, ProtocolKind, RuleKind, RunResult, ScenarioConfig,
    USupParams,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ensemble used for the example1 robustness sweep (six grid points, three protocols).
const SWEEP_ENSEMBLE: usize = 16;

type Check = Result<String, String>;

struct Criterion {
    id: u32,
    title: &'static str,
    run: fn() -> Check,
}

const CRITERIA: [Criterion; 10] = [
    Criterion {
        id: 1,
        title: "complexity table",
        run: complexity,
    },
    Criterion {
        id: 2,
        title: "combiner matrix properties",
        run: combiners,
    },
    Criterion {
        id: 3,
        title: "no node loses by cooperating",
        run: never_worse,
    },
    Criterion {
        id: 4,
        title: "node homogeneity",
        run: homogeneity,
    },
    Criterion {
        id: 5,
        title: "fusion convexity",
        run: convexity,
    },
    Criterion {
        id: 6,
        title: "theory vs Monte Carlo",
        run: theory_agreement,
    },
    Criterion {
        id: 7,
        title: "mean-stability bound",
        run: mean_stability,
    },
    Criterion {
        id: 8,
        title: "robustness crossover",
        run: robustness,
    },
    Criterion {
        id: 9,
        title: "feedback-period insensitivity",
        run: feedback_period,
    },
    Criterion {
        id: 10,
        title: "degenerate-limit equivalences",
        run: degenerate_limits,
    },
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for c in &CRITERIA {
            println!("criterion_{}: test", c.id);
        }
        return ExitCode::SUCCESS;
    }
    let selected: BTreeSet<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in CRITERIA
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {:>2} [{tag}] {} ({secs:.1} s): {detail}",
            c.id, c.title
        );
        failed += outcome.is_err() as u32;
    }
    if selected.is_empty() || selected.contains(&3) || selected.contains(&4) {
        match long_horizon() {
            Ok(d) => println!("supplementary (not counted): {d}"),
            Err(e) => println!("supplementary (not counted) errored: {e}"),
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all selected criteria passed");
        ExitCode::SUCCESS
    }
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    shipped(name).unwrap_or_else(|| panic!("missing shipped scenario {name}"))
}

fn fmt_db(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Random connected graph: a random spanning tree plus random chords.
fn random_connected(rng: &mut ChaCha8Rng, max_nodes: usize) -> NetworkTopology {
    let n = rng.random_range(2..=max_nodes);
    let mut edges = BTreeSet::new();
    for k in 1..n {
        edges.insert((rng.random_range(0..k), k));
    }
    for _ in 0..rng.random_range(0..=2 * n) {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    NetworkTopology::from_edges(n, &edges).expect("valid edge list")
}

fn complexity() -> Check {
    let expected = [
        (
            6,
            [
                (CountedAlgorithm::USup, 457),
                (CountedAlgorithm::LsAlg, 814),
                (CountedAlgorithm::MsdAlg, 1472),
            ],
        ),
        (
            10,
            [
                (CountedAlgorithm::USup, 657),
                (CountedAlgorithm::LsAlg, 1543),
                (CountedAlgorithm::MsdAlg, 3500),
            ],
        ),
    ];
    let mut misses = Vec::new();
    for (k, row) in expected {
        for (alg, want) in row {
            let got = multiplication_count(alg, 50, k);
            if got != want {
                misses.push(format!("{} at |N|={k}: {got} != {want}", alg.name()));
            }
        }
    }
    let table = complexity_table(50, &[6, 10]).map_err(|e| e.to_string())?;
    for token in ["457", "814", "1472", "657", "1543", "3500"] {
        if !table.split_whitespace().any(|t| t == token) {
            misses.push(format!("CLI table lacks {token}"));
        }
    }
    ensure(
        misses.is_empty(),
        if misses.is_empty() {
            "M=50: 457/814/1472 at |N|=6, 657/1543/3500 at |N|=10".into()
        } else {
            misses.join("; ")
        },
    )
}

fn combiners() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let start = Instant::now();
    let mut bad = Vec::new();
    for g in 0..100 {
        let topo = random_connected(&mut rng, 30);
        let n = topo.n_nodes();
        let variances: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1.0)).collect();
        let metro =
            build_metropolis(&topo, SupportMode::FullNeighborhood).map_err(|e| e.to_string())?;
        if !metro.is_doubly_stochastic(1e-12) || !metro.respects(&topo) {
            bad.push(format!("graph {g}: Metropolis not doubly stochastic"));
        }
        for mode in [
            SupportMode::FullNeighborhood,
            SupportMode::StrictNeighborhood,
        ] {
            let uni = build_uniform(&topo, mode).map_err(|e| e.to_string())?;
            let rel =
                build_relative_variance(&topo, &variances, mode).map_err(|e| e.to_string())?;
            for (name, c) in [("uniform", &uni), ("relative-variance", &rel)] {
                if !c.is_row_stochastic(1e-12) || !c.respects(&topo) {
                    bad.push(format!("graph {g}: {name} {mode:?} not row stochastic"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 1.0 {
        bad.push(format!("took {secs:.2} s"));
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("100 random connected graphs (N <= 30) in {secs:.3} s")
        } else {
            bad.join("; ")
        },
    )
}

/// The 200-run, 2e4-iteration Example 5 ensemble shared by criteria 3 to 6.
fn example5() -> &'static RunResult {
    static RESULT: OnceLock<RunResult> = OnceLock::new();
    RESULT.get_or_init(|| {
        let cfg = scenario("example5");
        assert_eq!((cfg.ensemble_size, cfg.iterations), (200, 20_000));
        assert_eq!(cfg.usup.feedback, FeedbackPeriod::Every(800));
        assert_eq!(cfg.sigma_q2, 0.0);
        run_scenario(&cfg).expect("example5 ensemble")
    })
}

fn steady(result: &RunResult, protocol: ProtocolKind) -> Vec<f64> {
    result.traces[&protocol]
        .steady_state_default()
        .expect("steady-state window")
}

fn never_worse_check(result: &RunResult) -> (bool, String) {
    let usup = steady(result, ProtocolKind::Usup);
    let alone = steady(result, ProtocolKind::Noncooperative);
    let excess: Vec<f64> = usup.iter().zip(&alone).map(|(u, a)| u - a).collect();
    let worst = excess
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(n, e)| (n + 1, *e))
        .unwrap();
    (
        worst.1 <= 1.0,
        format!(
            "U-sup minus noncooperative per node {} dB, worst node {} at {:+.2} dB (limit +1)",
            fmt_db(&excess),
            worst.0,
            worst.1
        ),
    )
}

fn homogeneity_check(result: &RunResult) -> (bool, String) {
    let usup = steady(result, ProtocolKind::Usup);
    let alone = steady(result, ProtocolKind::Noncooperative);
    let spread = max_of(&usup) - min_of(&usup);
    let alone_spread = max_of(&alone) - min_of(&alone);
    (
        spread <= 2.0 && alone_spread > 5.0,
        format!(
            "U-sup spread {spread:.2} dB (limit 2) over {}, noncooperative spread {alone_spread:.2} dB (needs > 5)",
            fmt_db(&usup)
        ),
    )
}

fn never_worse() -> Check {
    let (ok, detail) = never_worse_check(example5());
    ensure(ok, detail)
}

fn homogeneity() -> Check {
    let (ok, detail) = homogeneity_check(example5());
    ensure(ok, detail)
}

fn convexity() -> Check {
    let report = example5()
        .convexity
        .as_ref()
        .ok_or("no convexity probes recorded")?;
    let n_probes = report.iterations.len();
    let n_nodes = example5().noise_variances.len();
    let mut worst = f64::NEG_INFINITY;
    for p in 0..n_probes {
        for n in 0..n_nodes {
            let se = report.standard_error(p, n);
            worst = worst
                .max((report.fused_msd(p, n) - report.bound(p, n)) / se.max(f64::MIN_POSITIVE));
        }
    }
    ensure(
        n_probes == 10 && report.holds(3.0),
        format!(
            "{n_probes} probes x {n_nodes} nodes over {} runs, largest (fused - bound)/SE = {worst:.2} (limit 3)",
            report.runs()
        ),
    )
}

fn theory_agreement() -> Check {
    let result = example5();
    let cfg = scenario("example5");
    let inputs = cfg.theory_inputs().map_err(|e| e.to_string())?;
    let predicted = TheoryModel::new(inputs)
        .and_then(|mut m| m.run(cfg.iterations, cfg.record_stride))
        .map_err(|e| e.to_string())?;
    let simulated = &result.traces[&ProtocolKind::Usup];
    let (theory_db, mc_db) = (predicted.network_msd_db(), simulated.network_msd_db());
    let first = cfg.iterations / 10;
    let mut worst = (0usize, 0.0f64);
    for p in 0..mc_db.len() {
        let i = simulated.msd().point_start(p);
        let gap = (theory_db[p] - mc_db[p]).abs();
        if i >= first && gap > worst.1 {
            worst = (i, gap);
        }
    }
    let window = cfg.steady_window();
    let lambda_mc = result
        .lambda_check
        .as_ref()
        .ok_or("no supervisor trace recorded")?
        .tail_mean(window)
        .map_err(|e| e.to_string())?;
    let lambda_th = predicted
        .lambda_bar
        .tail_mean(window)
        .map_err(|e| e.to_string())?;
    let lambda_gap = lambda_mc
        .iter()
        .zip(&lambda_th)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(
        worst.1 <= 2.0 && lambda_gap <= 0.1,
        format!(
            "max |theory - MC| network MSD {:.2} dB at i = {} (limit 2 dB past i = {first}); max steady |lambda_bar - E lambda_check| = {lambda_gap:.3} (limit 0.1)",
            worst.1, worst.0
        ),
    )
}

/// `ρ((I − Λ)C) ≤ 1 − min λ` for uniform and random admissible `λ` vectors.
fn bound_violation(c: &CombinerMatrix, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let n = c.n_nodes();
    let mut worst = f64::NEG_INFINITY;
    let mut probe = |lambda: &[f64]| {
        let excess = fusion_spectral_radius(c, lambda) - (1.0 - min_of(lambda));
        worst = worst.max(excess);
    };
    for k in 0..=40 {
        let l = lo + (hi - lo) * k as f64 / 40.0;
        probe(&vec![l; n]);
    }
    for _ in 0..20 {
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        probe(&lambda);
    }
    worst
}

fn mean_stability() -> Check {
    let params = USupParams::default();
    let (lo, hi) = params.lambda_range();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::NEG_INFINITY;
    let mut tested = 0;
    for name in adanet::simrunner::SHIPPED {
        let cfg = scenario(name);
        let topo = cfg.topology.build().map_err(|e| e.to_string())?;
        let c = cfg.strict_combiner(&topo).map_err(|e| e.to_string())?;
        worst = worst.max(bound_violation(&c, &mut rng, lo, hi));
        tested += 1;
    }
    for _ in 0..100 {
        let topo = random_connected(&mut rng, 20);
        let n = topo.n_nodes();
        let mut dense = vec![0.0; n * n];
        for k in 0..n {
            let strict = topo.strict_neighborhood(k);
            let raw: Vec<f64> = strict.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            for (&l, w) in strict.iter().zip(raw) {
                dense[k * n + l] = w / total;
            }
        }
        let c = CombinerMatrix::from_dense(n, dense, SupportMode::StrictNeighborhood)
            .map_err(|e| e.to_string())?;
        worst = worst.max(bound_violation(&c, &mut rng, lo, hi));
        tested += 1;
    }
    let report = mean_stability_bound(
        &scenario("example5")
            .strict_combiner(
                &scenario("example5")
                    .topology
                    .build()
                    .map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?,
        4.0,
    );
    ensure(
        worst <= 1e-9 && (report.eta - 0.982).abs() < 5e-4 && report.holds(),
        format!(
            "{tested} combiners, largest rho - (1 - min lambda) = {worst:.2e} (limit 1e-9); eta(a+=4) = {:.4}",
            report.eta
        ),
    )
}

fn robustness() -> Check {
    let mut cfg = scenario("example1");
    cfg.ensemble_size = SWEEP_ENSEMBLE;
    let grid = cfg.sigma_q2_grid.clone();
    let protocols = [
        ProtocolKind::Noncooperative,
        ProtocolKind::LsAlg,
        ProtocolKind::Usup,
    ];
    let table = robustness_sweep(&cfg, &protocols, &grid, None).map_err(|e| e.to_string())?;
    let get = |s: f64, p: ProtocolKind, stat: SweepStat| table.get(s, p, stat).expect("sweep cell");
    let mut ok = true;
    let mut cells = Vec::new();
    for &s in &grid {
        let best_alone = get(s, ProtocolKind::Noncooperative, SweepStat::Min);
        let usup_margin = best_alone - get(s, ProtocolKind::Usup, SweepStat::Max);
        let ls_excess = get(s, ProtocolKind::LsAlg, SweepStat::Max) - best_alone;
        ok &= usup_margin >= 0.0;
        if s >= 1e-7 {
            ok &= ls_excess > 0.0;
        }
        cells.push(format!(
            "{s:.0e}: usup {usup_margin:+.2}/ls {ls_excess:+.2}"
        ));
    }
    ensure(
        ok,
        format!(
            "{SWEEP_ENSEMBLE} runs x {} iterations; margins in dB (U-sup below best noncooperative / LS above it): {}",
            cfg.sweep_iterations.unwrap_or(cfg.iterations),
            cells.join(", ")
        ),
    )
}

fn feedback_period() -> Check {
    const SPAN: usize = 1000;
    const STEP: usize = 100;
    let grid = [
        FeedbackPeriod::Every(10),
        FeedbackPeriod::Every(100),
        FeedbackPeriod::Every(1000),
        FeedbackPeriod::Every(10_000),
        FeedbackPeriod::Never,
    ];
    let base = scenario("example6");
    let mut steady_worst = Vec::new();
    let mut traces = Vec::new();
    for period in grid {
        let mut cfg = base.clone();
        cfg.usup.feedback = period;
        let result = run_scenario(&cfg).map_err(|e| e.to_string())?;
        let trace = result.traces[&ProtocolKind::Usup].clone();
        steady_worst.push(max_of(
            &trace.steady_state_default().map_err(|e| e.to_string())?,
        ));
        traces.push(trace);
    }
    let horizon = base.iterations;
    let never = traces.last().unwrap();
    let threshold = never
        .worst_node_window(horizon / 2, SPAN)
        .map_err(|e| e.to_string())?;
    let reach = |t: &adanet::MetricsTrace| {
        (0..=horizon - SPAN)
            .step_by(STEP)
            .find(|&i| t.worst_node_window(i, SPAN).is_ok_and(|v| v <= threshold))
    };
    let reach_never = reach(never).unwrap_or(horizon);
    let intermediate = &steady_worst[..3];
    let variation = max_of(intermediate) - min_of(intermediate);
    let reaches: Vec<Option<usize>> = traces.iter().map(reach).collect();
    let faster = reaches[..3]
        .iter()
        .all(|r| r.is_some_and(|i| i < reach_never));
    let fmt_reach: Vec<String> = reaches
        .iter()
        .map(|r| r.map_or("never".into(), |i| i.to_string()))
        .collect();
    ensure(
        variation <= 1.0 && faster,
        format!(
            "steady worst-node MSD for L = 10, 1e2, 1e3, 1e4, inf: {} dB (variation over [10, 1e3] {variation:.2}, limit 1); first iteration at or below {threshold:.2} dB: [{}]",
            fmt_db(&steady_worst),
            fmt_reach.join(", ")
        ),
    )
}

fn degenerate_limits() -> Check {
    let mut notes = Vec::new();

    // (a) U-sup with the mixer pinned at 1 and no feedback.
    let mut cfg = scenario("example5");
    cfg.iterations = 3000;
    cfg.ensemble_size = 6;
    cfg.probe_iterations.clear();
    cfg.usup.pin_lambda = Some(1.0);
    cfg.usup.feedback = FeedbackPeriod::Never;
    let r = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let (alone, sup) = (
        &r.traces[&ProtocolKind::Noncooperative],
        &r.traces[&ProtocolKind::Usup],
    );
    let same_data = r.checksums[&ProtocolKind::Noncooperative] == r.checksums[&ProtocolKind::Usup];
    let a = same_data
        && alone.msd() == sup.msd()
        && alone.emse() == sup.emse()
        && alone.mse() == sup.mse();
    notes.push(format!(
        "(a) pinned U-sup {}",
        if a { "bit-identical" } else { "differs" }
    ));

    // (b) Diffusion with an identity combiner.
    let (n, m) = (6, 6);
    let rules: Vec<LearningRule> = (0..n)
        .map(|k| LearningRule::nlms(if k % 2 == 0 { 0.1 } else { 0.01 }))
        .collect();
    let mut b = true;
    for variant in [
        DiffusionVariant::CombineThenAdapt,
        DiffusionVariant::AdaptThenCombine,
    ] {
        let mut diff = Diffusion::new(variant, m, rules.clone(), CombinerMatrix::identity(n))
            .map_err(|e| e.to_string())?;
        let mut alone = Noncooperative::new(m, rules.clone());
        let node_cfg: Vec<NodeDataConfig> = (0..n)
            .map(|k| NodeDataConfig {
                beta: 0.3 * (k % 3) as f64,
                snr_db: 10.0 + k as f64,
                sigma_x2: 1.0,
            })
            .collect();
        let noise: Vec<f64> = (0..n).map(|k| 0.05 * (k + 1) as f64).collect();
        let mut gen = DataGenerator::new(&PlantModel::unit(m, 1e-6), &node_cfg, &noise, 99, 0)
            .map_err(|e| e.to_string())?;
        let mut data = IterationData::new(n, m);
        for i in 0..5000 {
            gen.step(&mut data);
            diff.step(i, data.observations())
                .map_err(|e| e.to_string())?;
            alone
                .step(i, data.observations())
                .map_err(|e| e.to_string())?;
            b &= (0..n).all(|k| {
                diff.nodes()[k].psi == alone.nodes()[k].psi && diff.scored(k) == alone.scored(k)
            });
        }
    }
    notes.push(format!(
        "(b) identity diffusion {}",
        if b { "bit-identical" } else { "differs" }
    ));

    // (c) One-node model against the dense textbook LMS covariance recursion.
    let (order, mu, sigma_v2, sigma_q2) = (5, 0.04, 0.02, 1e-6);
    let r_cov = DMatrix::from_fn(order, order, |a, b| {
        0.6f64.powi((a as i32 - b as i32).abs())
    });
    let initial = vec![1.0 / (order as f64).sqrt(); order];
    let topo = NetworkTopology::isolated(1).map_err(|e| e.to_string())?;
    let inputs = TheoryInputs {
        order,
        rule: RuleKind::Lms,
        mu: vec![mu],
        covariances: vec![r_cov.clone()],
        noise_variances: vec![sigma_v2],
        sigma_q2,
        initial: initial.clone(),
        combiner: CombinerRule::Uniform
            .build_strict_with_fallback(&topo, &[sigma_v2])
            .map_err(|e| e.to_string())?,
        usup: USupParams {
            feedback: FeedbackPeriod::Never,
            ..USupParams::default()
        },
    };
    let mut model = TheoryModel::new(inputs).map_err(|e| e.to_string())?;
    let w0 = nalgebra::DVector::from_vec(initial);
    let mut k_ref = &w0 * w0.transpose();
    let eye = DMatrix::<f64>::identity(order, order);
    let mut rel = 0.0f64;
    for _ in 0..5000 {
        model.step().map_err(|e| e.to_string())?;
        let rk = &r_cov * &k_ref;
        k_ref = &k_ref - &rk * mu - &k_ref * &r_cov * mu
            + (&rk * &r_cov * 2.0 + &r_cov * rk.trace()) * (mu * mu)
            + &r_cov * (mu * mu * sigma_v2)
            + &eye * sigma_q2;
        rel = rel.max((&model.state().k - &k_ref).amax() / k_ref.amax());
    }
    let c = rel <= 1e-12;
    notes.push(format!(
        "(c) one-node theory vs LMS recursion max relative gap {rel:.1e} (limit 1e-12)"
    ));

    ensure(a && b && c, notes.join("; "))
}

/// Criteria 3 and 4 re-evaluated after the supervisors have settled.
fn long_horizon() -> Result<String, String> {
    let mut cfg = scenario("example5");
    cfg.iterations = 400_000;
    cfg.ensemble_size = 20;
    cfg.record_stride = 100;
    cfg.probe_iterations.clear();
    cfg.checksum = false;
    let result = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let (a_ok, a) = never_worse_check(&result);
    let (b_ok, b) = homogeneity_check(&result);
    Ok(format!(
        "example5 with 20 runs x 4e5 iterations: never-worse {}, {a}; homogeneity {}, {b}",
        if a_ok { "holds" } else { "fails" },
        if b_ok { "holds" } else { "fails" }
    ))
}
