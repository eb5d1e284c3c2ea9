//! Command-line front end: `run`, `theory`, `sweep`, `complexity`, `list-scenarios`.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! simulation or the theory recursion diverges.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{robustness_sweep, to_db, MetricsError, SweepError};
use crate::protocols::{multiplication_count, CountedAlgorithm, FeedbackPeriod, ProtocolKind};
use crate::simrunner::{
    run_scenario, shipped_scenarios, ConfigError, RunResult, ScenarioConfig, SimError,
};
use crate::theory::{mean_stability_bound, TheoryError, TheoryModel};

/// `println!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(
    name = "adanet",
    version,
    about = "Adaptive-network simulations and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo run of a scenario; writes per-protocol metric CSVs.
    Run(ScenarioArgs),
    /// Deterministic model prediction for U-sup on a scenario.
    Theory {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Horizon; defaults to the scenario's iteration count.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Steady-state robustness over σ²_q, or worst-node curves over the feedback period.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated σ²_q grid, e.g. `1e-9,1e-8,1e-7`. Defaults to the scenario's grid.
        #[arg(long = "sigma-q2", value_delimiter = ',', num_args = 0..)]
        sigma_q2: Option<Vec<f64>>,
        /// Comma-separated feedback periods (integers or `inf`); switches to the L sweep.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        feedback: Option<Vec<FeedbackPeriod>>,
        /// Restrict the σ²_q sweep to these protocols.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<ProtocolKind>,
        /// Steady-state window in iterations.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Multiplications per node and iteration spent on cooperation.
    Complexity {
        /// Filter order.
        #[arg(long = "M", alias = "order", default_value_t = 50)]
        order: u64,
        /// Neighborhood sizes |𝒩_n| (node included), comma-separated.
        #[arg(long, value_delimiter = ',', default_values_t = [6u64, 10])]
        degree: Vec<u64>,
    },
    /// Names and descriptions of the bundled scenarios.
    ListScenarios,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Bundled scenario name or path to a JSON config.
    #[arg(long)]
    pub scenario: String,
    /// Dotted-path override, e.g. `--set usup.L=inf`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed, replacing the config's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the ensemble (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, env = "ADANET_OUTPUT_DIR", default_value = "adanet-out")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Sim(SimError::DivergenceDetected { .. })
            | CliError::Sweep(SweepError::Run {
                source: SimError::DivergenceDetected { .. },
                ..
            })
            | CliError::Theory(TheoryError::NonFiniteState { .. }) => 2,
            _ => 1,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => cmd_run(&args),
        Command::Theory {
            scenario,
            iterations,
        } => cmd_theory(&scenario, iterations),
        Command::Sweep {
            scenario,
            sigma_q2,
            feedback,
            protocols,
            window,
        } => cmd_sweep(&scenario, sigma_q2, feedback, &protocols, window),
        Command::Complexity { order, degree } => {
            {
                use std::io::Write as _;
                let _ = write!(std::io::stdout(), "{}", complexity_table(order, &degree)?);
            }
            Ok(())
        }
        Command::ListScenarios => {
            for cfg in shipped_scenarios() {
                say!("{:<10} {}", cfg.name, cfg.description);
            }
            Ok(())
        }
    }
}

/// Text table of multiplication counts, one row per neighborhood size.
pub fn complexity_table(order: u64, degrees: &[u64]) -> Result<String, CliError> {
    if order == 0 || degrees.is_empty() || degrees.contains(&0) {
        return Err(CliError::Usage(
            "complexity needs --M >= 1 and neighborhood sizes >= 1".into(),
        ));
    }
    let mut out = format!("{:>4} {:>6}", "M", "|N_n|");
    for alg in CountedAlgorithm::ALL {
        out += &format!(" {:>8}", alg.name());
    }
    out.push('\n');
    for &k in degrees {
        out += &format!("{order:>4} {k:>6}");
        for alg in CountedAlgorithm::ALL {
            out += &format!(" {:>8}", multiplication_count(alg, order, k));
        }
        out.push('\n');
    }
    Ok(out)
}

fn load(args: &ScenarioArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::resolve(&args.scenario)?;
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn with_pool<T: Send>(
    jobs: Option<usize>,
    work: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match jobs {
        None => work(),
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(work),
    }
}

/// Output directory for one scenario plus the list of files written so far.
struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn open(root: &Path, scenario: &str) -> Result<Self, CliError> {
        let dir = root.join(scenario);
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(BufWriter::new(file))
    }

    /// Writes `manifest.json` with the resolved config, its hash, the seed and
    /// the sha256 of every artifact.
    fn finish(self, command: &str, cfg: &ScenarioConfig) -> Result<PathBuf, CliError> {
        let config_json = cfg.to_json();
        let mut files = serde_json::Map::new();
        for path in &self.written {
            let bytes = std::fs::read(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let name = path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            files.insert(name, json!(hex::encode(Sha256::digest(&bytes))));
        }
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "scenario": cfg.name,
            "master_seed": cfg.master_seed,
            "config_sha256": hex::encode(Sha256::digest(config_json.as_bytes())),
            "config": cfg,
            "artifacts": files,
        });
        let path = self.dir.join(format!("{command}_manifest.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_run(
    result: &RunResult,
    artifacts: &mut Artifacts,
    cfg: &ScenarioConfig,
) -> Result<(), CliError> {
    for (kind, trace) in &result.traces {
        trace.write_csv(artifacts.create(&format!("{kind}.csv"))?)?;
    }
    if let (Some(lambda), Some(check)) = (&result.lambda, &result.lambda_check) {
        let mut w = csv::Writer::from_writer(artifacts.create("usup_lambda.csv")?);
        w.write_record(["iter", "node", "lambda", "lambda_check"])
            .map_err(MetricsError::from)?;
        for p in 0..lambda.points() {
            for n in 0..lambda.n_nodes() {
                w.write_record([
                    lambda.point_start(p).to_string(),
                    (n + 1).to_string(),
                    format!("{:.6}", lambda.mean(n, p)),
                    format!("{:.6}", check.mean(n, p)),
                ])
                .map_err(MetricsError::from)?;
            }
        }
        w.flush().map_err(io_err(&artifacts.dir))?;
    }
    let window = cfg.steady_window();
    let mut w = csv::Writer::from_writer(artifacts.create("steady_state.csv")?);
    w.write_record(["protocol", "node", "msd_db"])
        .map_err(MetricsError::from)?;
    for (kind, trace) in &result.traces {
        for (n, db) in trace.steady_state(window)?.iter().enumerate() {
            w.write_record([kind.to_string(), (n + 1).to_string(), format!("{db:.6}")])
                .map_err(MetricsError::from)?;
        }
    }
    w.flush().map_err(io_err(&artifacts.dir))?;
    Ok(())
}

fn cmd_run(args: &ScenarioArgs) -> Result<(), CliError> {
    let cfg = load(args)?;
    let result = with_pool(args.jobs, || Ok(run_scenario(&cfg)?))?;
    let mut artifacts = Artifacts::open(&args.output_dir, &cfg.name)?;
    write_run(&result, &mut artifacts, &cfg)?;
    let manifest = artifacts.finish("run", &cfg)?;

    say!(
        "{}: {} runs x {} iterations in {:.1} s (steady state over the last {} iterations)",
        cfg.name,
        result.ensemble_size,
        result.iterations,
        result.elapsed_secs,
        cfg.steady_window()
    );
    say!(
        "{:<20} {:>10} {:>10} {:>10}",
        "protocol",
        "min dB",
        "max dB",
        "net dB"
    );
    for (kind, trace) in &result.traces {
        let steady = trace.steady_state(cfg.steady_window())?;
        let min = steady.iter().copied().fold(f64::INFINITY, f64::min);
        let max = steady.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lin: f64 =
            steady.iter().map(|db| 10f64.powf(db / 10.0)).sum::<f64>() / steady.len() as f64;
        say!(
            "{:<20} {min:>10.2} {max:>10.2} {:>10.2}",
            kind.name(),
            to_db(lin)
        );
    }
    for (kind, sum) in &result.checksums {
        say!("data stream {kind}: {sum}");
    }
    if let Some(report) = &result.convexity {
        say!(
            "fusion convexity within 3 SE at every probe: {}",
            report.holds(3.0)
        );
    }
    say!("manifest: {}", manifest.display());
    Ok(())
}

fn cmd_theory(args: &ScenarioArgs, iterations: Option<usize>) -> Result<(), CliError> {
    let cfg = load(args)?;
    let inputs = cfg.theory_inputs()?;
    let bound = mean_stability_bound(&inputs.combiner, inputs.usup.a_plus);
    let horizon = iterations.unwrap_or(cfg.iterations);
    if horizon == 0 {
        return Err(CliError::Usage("--iterations must be positive".into()));
    }
    let trace = TheoryModel::new(inputs)?.run(horizon, cfg.record_stride)?;
    let mut artifacts = Artifacts::open(&args.output_dir, &cfg.name)?;
    trace.write_csv(artifacts.create("theory.csv")?)?;
    let manifest = artifacts.finish("theory", &cfg)?;
    let net = trace.network_msd_db();
    say!(
        "{}: predicted network MSD {:.2} dB after {horizon} iterations",
        cfg.name,
        net.last().copied().unwrap_or(f64::NAN)
    );
    say!(
        "mean stability: eta = {:.4}, worst-case spectral radius = {:.4} ({})",
        bound.eta,
        bound.spectral_radius,
        if bound.holds() {
            "bound holds"
        } else {
            "bound violated"
        }
    );
    say!("manifest: {}", manifest.display());
    Ok(())
}

fn cmd_sweep(
    args: &ScenarioArgs,
    sigma_q2: Option<Vec<f64>>,
    feedback: Option<Vec<FeedbackPeriod>>,
    protocols: &[ProtocolKind],
    window: Option<usize>,
) -> Result<(), CliError> {
    let cfg = load(args)?;
    let horizon = match feedback {
        Some(_) => cfg.iterations,
        None => cfg.sweep_iterations.unwrap_or(cfg.iterations),
    };
    if let Some(w) = window {
        if w == 0 || w > horizon {
            return Err(CliError::Usage(format!(
                "--window must lie in 1..={horizon}"
            )));
        }
    }
    let mut artifacts = Artifacts::open(&args.output_dir, &cfg.name)?;
    match (sigma_q2, feedback) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "choose either --sigma-q2 or --feedback".into(),
            ))
        }
        (None, Some(grid)) => feedback_sweep(&cfg, &grid, window, args.jobs, &mut artifacts)?,
        (grid, None) => {
            let grid = grid.unwrap_or_else(|| cfg.sigma_q2_grid.clone());
            if grid.is_empty() {
                return Err(CliError::Usage(
                    "empty grid: pass --sigma-q2 v1,v2,... or --feedback L1,L2,...".into(),
                ));
            }
            let table = with_pool(args.jobs, || {
                Ok(robustness_sweep(&cfg, protocols, &grid, window)?)
            })?;
            table.write_csv(artifacts.create("sweep_sigma_q2.csv")?)?;
            say!(
                "{:>10} {:<20} {:>4} {:>10}",
                "sigma_q2",
                "protocol",
                "stat",
                "msd dB"
            );
            for row in &table.rows {
                say!(
                    "{:>10.1e} {:<20} {:>4} {:>10.2}",
                    row.sigma_q2,
                    row.protocol.name(),
                    row.stat.name(),
                    row.msd_db
                );
            }
        }
    }
    let manifest = artifacts.finish("sweep", &cfg)?;
    say!("manifest: {}", manifest.display());
    Ok(())
}

/// Worst-node MSD, each node averaged over `[i, i+999]`, for every feedback period.
fn feedback_sweep(
    cfg: &ScenarioConfig,
    grid: &[FeedbackPeriod],
    window: Option<usize>,
    jobs: Option<usize>,
    artifacts: &mut Artifacts,
) -> Result<(), CliError> {
    const SPAN: usize = 1000;
    let grid = if grid.is_empty() {
        &cfg.feedback_grid[..]
    } else {
        grid
    };
    if grid.is_empty() {
        return Err(CliError::Usage(
            "empty grid: pass --feedback L1,L2,...".into(),
        ));
    }
    if cfg.iterations < SPAN {
        return Err(CliError::Usage(format!(
            "the L sweep needs at least {SPAN} iterations"
        )));
    }
    let mut w = csv::Writer::from_writer(artifacts.create("sweep_feedback.csv")?);
    w.write_record(["L", "iter", "worst_node_msd_db"])
        .map_err(MetricsError::from)?;
    let steady = window.unwrap_or_else(|| cfg.steady_window());
    for &period in grid {
        let mut run_cfg = cfg.clone();
        run_cfg.usup.feedback = period;
        if !run_cfg.protocols.contains(&ProtocolKind::Usup) {
            run_cfg.protocols.push(ProtocolKind::Usup);
        }
        let result = with_pool(jobs, || Ok(run_scenario(&run_cfg)?))?;
        let trace = &result.traces[&ProtocolKind::Usup];
        for start in (0..=cfg.iterations - SPAN).step_by(SPAN) {
            let db = trace.worst_node_window(start, SPAN)?;
            w.write_record([period.to_string(), start.to_string(), format!("{db:.6}")])
                .map_err(MetricsError::from)?;
        }
        let worst = trace
            .steady_state(steady)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        say!("L = {period:<8} steady-state worst node {worst:.2} dB");
    }
    w.flush().map_err(io_err(&artifacts.dir))?;
    Ok(())
}
