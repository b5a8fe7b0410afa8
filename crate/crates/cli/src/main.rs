//! Command-line driver: loads flat key-value experiment configs, runs the
//! repeated-game simulator and the round-race analyses, and exports CSVs
//! for downstream plotting. Thin and single-threaded by design — all the
//! actual work lives in the core library.

mod config;
mod export;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use gapsim_core::incircle::{check_supermodular, mining_gap_profile, SupermodularReport};
use gapsim_core::payoff::SidePayoffModel;
use gapsim_core::sim::{run_experiment, SimConfig};
use gapsim_core::zdengine::{
    controllable_payoff_range, verify_linear_relation, zd_user_policy, MinerPolicy, PayoffTables,
    StrategyGrid,
};
use log::LevelFilter;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gapsim",
    version,
    about = "Simulator and analysis toolkit for the fee-incentive mining game"
)]
struct Cli {
    /// Diagnostics verbosity on stderr: off, error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "warn", value_parser = parse_log_level)]
    log_level: LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the repeated game and export trace/aggregate CSVs.
    Simulate {
        /// Experiment definition to run.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (defaults to the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's repeat count.
        #[arg(long)]
        repeats: Option<usize>,
        /// Print a complete default configuration document and exit.
        #[arg(long)]
        emit_default_config: bool,
    },
    /// Print the interval of long-run miner payoffs the user side can pin.
    ZdRange {
        #[arg(long)]
        config: PathBuf,
    },
    /// Synthesize a pinning policy for a target payoff and report the worst
    /// identity residual against random miner policies.
    ZdCheck {
        #[arg(long)]
        config: PathBuf,
        /// Long-run miner payoff to pin.
        #[arg(long)]
        target: f64,
        /// Number of random miner policies to test against.
        #[arg(long, default_value_t = 100)]
        policies: usize,
        /// Override the config's RNG seed for the random opponents.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the complementarity conditions of the round race and export
    /// the evidence CSV; exits 0 only if every sampled condition holds.
    VerifySupermodular {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the income-versus-cost profile across one round.
    GapProfile {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_log_level(s: &str) -> Result<LevelFilter, String> {
    s.parse().map_err(|_| {
        format!("unknown log level '{s}' (expected off, error, warn, info, debug, or trace)")
    })
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("[{}] {}", record.level().as_str().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn init_logger(filter: LevelFilter) {
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(filter);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logger(cli.log_level);
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    ExperimentConfig::parse_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))
}

fn ensure_out_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = flag.unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

/// Discretized game and payoff tables shared by the zd-* commands.
fn game_tables(sim: &SimConfig) -> Result<(StrategyGrid, PayoffTables)> {
    let grid = StrategyGrid::new(sim.miner_levels, sim.fee_levels, sim.params.max_fee)?;
    let model = SidePayoffModel::linear(sim.params)?;
    let tables = PayoffTables::from_model(&grid, &model)?;
    Ok((grid, tables))
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate { config, out, seed, repeats, emit_default_config } => {
            if emit_default_config {
                print!("{}", ExperimentConfig::default().emit());
                return Ok(ExitCode::SUCCESS);
            }
            let Some(config) = config else {
                bail!("simulate requires --config PATH (or --emit-default-config for a template)");
            };
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.sim.seed = seed;
            }
            if let Some(repeats) = repeats {
                cfg.sim.repeats = repeats;
            }
            let out_dir = ensure_out_dir(out, &cfg)?;
            cmd_simulate(&cfg, &out_dir)
        }
        Command::ZdRange { config } => {
            let cfg = load_config(&config)?;
            let (grid, tables) = game_tables(&cfg.sim)?;
            let (lo, hi) = controllable_payoff_range(&grid, &tables);
            println!("controllable payoff range: ({lo}, {hi})");
            Ok(ExitCode::SUCCESS)
        }
        Command::ZdCheck { config, target, policies, seed } => {
            let cfg = load_config(&config)?;
            cmd_zd_check(&cfg, target, policies, seed)
        }
        Command::VerifySupermodular { config, out } => {
            let cfg = load_config(&config)?;
            let out_dir = ensure_out_dir(out, &cfg)?;
            cmd_verify_supermodular(&cfg, &out_dir)
        }
        Command::GapProfile { config, out } => {
            let cfg = load_config(&config)?;
            let out_dir = ensure_out_dir(out, &cfg)?;
            cmd_gap_profile(&cfg, &out_dir)
        }
    }
}

fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExitCode> {
    let sim = &cfg.sim;
    log::info!(
        "running {} repeats of {} prelim + {} main rounds (user: {}, mode: {})",
        sim.repeats,
        sim.prelim_rounds,
        sim.main_rounds,
        sim.user.name(),
        sim.play_mode.name()
    );
    let result = run_experiment(sim)?;

    let trace_path = out_dir.join("trace.csv");
    export::write_trace(&trace_path, &result)?;
    let aggregate_path = out_dir.join("aggregate.csv");
    export::write_aggregate(&aggregate_path, &result.aggregate)?;

    let runs = result.traces.len() as f64;
    let mean = |f: &dyn Fn(&gapsim_core::sim::SimTrace) -> f64| -> f64 {
        result.traces.iter().map(|t| f(t)).sum::<f64>() / runs
    };
    let final_p = mean(&|t| t.summary.final_p_earliest);
    let final_fee = mean(&|t| t.summary.final_mean_fee);
    let long_run = mean(&|t| t.summary.long_run_miner_payoff);

    println!(
        "runs: {}  rounds: {} prelim + {} main  user: {}  mode: {}",
        sim.repeats,
        sim.prelim_rounds,
        sim.main_rounds,
        sim.user.name(),
        sim.play_mode.name()
    );
    println!("final earliest-level probability: {final_p:.4} (mean over runs)");
    println!("closing mean fee (last 20 main rounds): {final_fee:.4}");
    println!("long-run average miner payoff: {long_run:.4}");
    println!("wrote {} and {}", trace_path.display(), aggregate_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_zd_check(
    cfg: &ExperimentConfig,
    target: f64,
    policies: usize,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let (grid, tables) = game_tables(&cfg.sim)?;
    let (policy, coeffs) = zd_user_policy(&grid, &tables, target, cfg.sim.residual_rule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.sim.seed));
    let mut worst = 0.0f64;
    for _ in 0..policies {
        let opponent = MinerPolicy::random(&grid, &mut rng);
        let residual = verify_linear_relation(&grid, &tables, &policy, &opponent, &coeffs)?;
        worst = worst.max(residual);
    }
    println!("target: {target}");
    println!("coefficients: alpha = {}, gamma = {}", coeffs.alpha, coeffs.gamma);
    println!("max residual over {policies} random miner policies: {worst:e}");
    Ok(ExitCode::SUCCESS)
}

/// First sampled condition that failed, for the violation message.
fn first_violation(report: &SupermodularReport) -> Option<String> {
    for (name, table) in [("condition_a", &report.condition_a), ("condition_b", &report.condition_b)]
    {
        for (i, row) in table.iter().enumerate() {
            if let Some(j) = row.iter().position(|&ok| !ok) {
                return Some(format!("{name} fails for miner {i} at t = {}", report.times[j]));
            }
        }
    }
    report
        .user_condition
        .iter()
        .position(|&ok| !ok)
        .map(|k| format!("user_condition fails for user {k}"))
}

fn cmd_verify_supermodular(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExitCode> {
    let model = cfg.race.clone().validated()?;
    let report = check_supermodular(&model, cfg.grid_resolution)?;

    let path = out_dir.join("supermodular.csv");
    export::write_supermodular(&path, &report)?;

    println!(
        "checked {} miners at {} times and {} users",
        model.n_miners(),
        report.times.len(),
        model.n_users()
    );
    println!("min mixed partial: {:e}", report.min_mixed_partial);
    println!("report: {}", path.display());
    match first_violation(&report) {
        None => {
            println!("all conditions hold");
            Ok(ExitCode::SUCCESS)
        }
        Some(violation) => {
            println!("violated: {violation}");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_gap_profile(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExitCode> {
    let model = cfg.race.clone().validated()?;
    let samples = mining_gap_profile(&model, cfg.time_resolution)?;

    let path = out_dir.join("gap_profile.csv");
    export::write_gap_profile(&path, &samples)?;

    let in_gap = samples.iter().filter(|s| s.in_gap).count();
    println!("{in_gap} of {} samples are inside the gap", samples.len());
    if let Some(first_out) = samples.iter().find(|s| !s.in_gap) {
        if in_gap > 0 {
            println!("income first covers cost at t = {}", first_out.t);
        }
    }
    println!("profile: {}", path.display());
    Ok(ExitCode::SUCCESS)
}
