//! Episode orchestration: a preliminary estimation phase followed by the
//! mechanism-driven (or baseline-driven) main phase, with repeat
//! averaging across independent RNG streams.
//!
//! Round order is sequential: the user side commits a fee first, then the
//! miner side draws its start-up level, payoffs realize, and the
//! evolutionary update and estimates advance.

use crate::agents::{AgentError, BaselineKind, BaselineUser, EvolutionaryMinerState, FreqMode};
use crate::mechanism::{
    init_mechanism, mechanism_round_target, Branch, MechanismError, MechanismState,
    TransitionEstimate,
};
use crate::payoff::{EconomicParams, PayoffError, SidePayoffModel};
use crate::zdengine::{
    controllable_payoff_range, zd_user_policy, PayoffTables, ResidualRule, StrategyGrid, ZdError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Payoff(#[from] PayoffError),
    #[error(transparent)]
    Zd(#[from] ZdError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("trace has no main-phase rounds to average")]
    EmptyMainPhase,
}

/// How the miner's evolutionary update is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlayMode {
    /// The update consumes the mechanism's enforced expectation directly;
    /// the earliest strategy is valued at the top of the controllable
    /// range the mechanism promises.
    Analytic,
    /// The update consumes frequency-weighted empirical values. Exposes
    /// the gap between single-round stationary expectations and realized
    /// play: with decelerating fee memory the earliest level's empirical
    /// value trails the mixture average.
    Sampled,
}

impl PlayMode {
    pub fn name(&self) -> &'static str {
        match self {
            PlayMode::Analytic => "analytic",
            PlayMode::Sampled => "sampled",
        }
    }
}

impl std::str::FromStr for PlayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(PlayMode::Analytic),
            "sampled" => Ok(PlayMode::Sampled),
            other => Err(format!("unknown play mode '{other}' (expected analytic or sampled)")),
        }
    }
}

/// Who plays the user side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserAgent {
    /// Incentive mechanism backed by the zero-determinant policy engine.
    Mechanism,
    Baseline(BaselineKind),
}

impl UserAgent {
    pub fn name(&self) -> &'static str {
        match self {
            UserAgent::Mechanism => "mechanism",
            UserAgent::Baseline(kind) => kind.name(),
        }
    }
}

impl std::str::FromStr for UserAgent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mechanism" {
            return Ok(UserAgent::Mechanism);
        }
        s.parse::<BaselineKind>()
            .map(UserAgent::Baseline)
            .map_err(|_| format!("unknown user agent '{s}' (expected mechanism or a baseline)"))
    }
}

/// Full experiment description; hashes into the trace for provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub prelim_rounds: usize,
    pub main_rounds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub miner_levels: usize,
    pub fee_levels: usize,
    pub params: EconomicParams,
    pub user: UserAgent,
    pub p0: f64,
    pub q0: f64,
    pub play_mode: PlayMode,
    pub residual_rule: ResidualRule,
    /// `None` keeps cumulative frequencies; `Some(n)` slides a window.
    pub freq_window: Option<usize>,
    pub omega_reward: f64,
    pub omega_penalty: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            prelim_rounds: 100,
            main_rounds: 200,
            repeats: 50,
            seed: 42,
            miner_levels: 10,
            fee_levels: 10,
            params: EconomicParams::default(),
            user: UserAgent::Mechanism,
            p0: 0.5,
            q0: 0.7,
            play_mode: PlayMode::Analytic,
            residual_rule: ResidualRule::AllOnZero,
            freq_window: None,
            omega_reward: 1.0,
            omega_penalty: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.prelim_rounds < 1 || self.main_rounds < 1 || self.repeats < 1 {
            return Err(SimError::InvalidConfig(
                "prelim_rounds, main_rounds, and repeats must all be at least 1".into(),
            ));
        }
        for (name, v) in [("p0", self.p0), ("q0", self.q0)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(SimError::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.freq_window == Some(0) {
            return Err(SimError::InvalidConfig("freq_window must be at least 1".into()));
        }
        StrategyGrid::new(self.miner_levels, self.fee_levels, self.params.max_fee)
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.params.validate().map_err(SimError::Payoff)?;
        if !(self.omega_reward > 0.0) || !(self.omega_penalty > 0.0) {
            return Err(SimError::InvalidConfig("omega parameters must be positive".into()));
        }
        Ok(())
    }

    fn freq_mode(&self) -> FreqMode {
        match self.freq_window {
            None => FreqMode::Cumulative,
            Some(n) => FreqMode::Windowed(n),
        }
    }

    /// Canonical field rendering; any semantic change changes the hash.
    fn canonical_string(&self) -> String {
        let p = &self.params;
        format!(
            "gapsim-config-v1|R={}|Q={}|repeats={}|seed={}|eta1={}|eta2={}|\
             eps_m={}|sig_m={}|eps_u={}|sig_u={}|max_fee={}|subsidy={}|T={}|\
             user={}|p0={}|q0={}|mode={}|residual={:?}|window={:?}|w_r={}|w_p={}",
            self.prelim_rounds,
            self.main_rounds,
            self.repeats,
            self.seed,
            self.miner_levels,
            self.fee_levels,
            p.miner_gain_scale,
            p.miner_cost_scale,
            p.user_gain_scale,
            p.user_cost_scale,
            p.max_fee,
            p.subsidy,
            p.round_duration,
            self.user.name(),
            self.p0,
            self.q0,
            self.play_mode.name(),
            self.residual_rule,
            self.freq_window,
            self.omega_reward,
            self.omega_penalty,
        )
    }

    /// FNV-1a hash of the canonical rendering.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for b in self.canonical_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prelim,
    Main,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Prelim => "prelim",
            Phase::Main => "main",
        })
    }
}

/// Everything observable about one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub phase: Phase,
    pub fee_level: usize,
    pub miner_level: usize,
    pub s_m: f64,
    pub s_u: f64,
    /// Mechanism target for the round (mechanism user, main phase only).
    pub e_target: Option<f64>,
    pub branch: Option<Branch>,
    /// Earliest-level probability after this round's update.
    pub p_earliest: f64,
    pub kappa: Option<f64>,
    /// Rig start time `(1 - x) * T` implied by the miner's level.
    pub start_time: f64,
    /// Expected miner payoff consumed by this round's evolutionary
    /// update (main phase only).
    pub expected_miner_payoff: Option<f64>,
}

/// Per-run summary over the closing stretch of the main phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub final_p_earliest: f64,
    /// Mean fee value over the last (up to) 20 main rounds.
    pub final_mean_fee: f64,
    /// Mean start time over the same stretch.
    pub final_mean_start_time: f64,
    /// Mean expected miner payoff over the whole main phase.
    pub long_run_miner_payoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub config_hash: u64,
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// Mean of the expected miner payoffs over the trace's main phase.
pub fn long_run_average_payoff(trace: &SimTrace) -> Result<f64, SimError> {
    let pays: Vec<f64> = trace
        .records
        .iter()
        .filter(|r| r.phase == Phase::Main)
        .filter_map(|r| r.expected_miner_payoff)
        .collect();
    if pays.is_empty() {
        return Err(SimError::EmptyMainPhase);
    }
    Ok(pays.iter().sum::<f64>() / pays.len() as f64)
}

fn sample_from<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Runs one episode: `prelim_rounds` of estimation play followed by
/// `main_rounds` of mechanism (or baseline) play.
pub fn run_episode<R: Rng>(config: &SimConfig, rng: &mut R) -> Result<SimTrace, SimError> {
    config.validate()?;
    let grid = StrategyGrid::new(config.miner_levels, config.fee_levels, config.params.max_fee)?;
    let model = SidePayoffModel::linear(config.params)?;
    let tables = PayoffTables::from_model(&grid, &model)?;
    let (range_lo, range_hi) = controllable_payoff_range(&grid, &tables);

    let mut miner = EvolutionaryMinerState::new(&grid, config.p0, config.freq_mode())?;
    let mut baseline = match config.user {
        UserAgent::Mechanism => None,
        UserAgent::Baseline(kind) => Some(BaselineUser::new(kind, config.q0)?),
    };
    let mut estimate = Some(TransitionEstimate::new(grid.n_miner()));
    let mut mech: Option<MechanismState> = None;
    let mut opening_target = None;

    let mut records = Vec::with_capacity(config.prelim_rounds + config.main_rounds);
    let mut prev_fee: Option<usize> = None;
    let mut prev_level: Option<usize> = None;
    let mut last_user_payoff = 0.0;
    let total_rounds = config.prelim_rounds + config.main_rounds;

    for round in 0..total_rounds {
        let phase = if round < config.prelim_rounds { Phase::Prelim } else { Phase::Main };
        let main_index = round.checked_sub(config.prelim_rounds);

        if main_index == Some(0) {
            if let Some(est) = estimate.take() {
                let (state, opening) = init_mechanism(
                    est,
                    range_lo,
                    range_hi,
                    config.omega_reward,
                    config.omega_penalty,
                )?;
                opening_target = Some(opening);
                mech = Some(state);
            }
        }

        // User side commits its fee first.
        let last_round_view = prev_level.map(|l| (l, last_user_payoff));
        let (fee, e_target, branch) = match (&mut baseline, &mut mech, phase) {
            (Some(agent), _, _) => (agent.next_fee(last_round_view, &grid, rng), None, None),
            (None, _, Phase::Prelim) => (rng.gen_range(0..=grid.fee_levels), None, None),
            (None, Some(state), Phase::Main) => {
                let (target, branch) = if main_index == Some(0) {
                    (opening_target.expect("opening target set at main-phase entry"), Branch::Init)
                } else {
                    let rho = prev_level.expect("main phase follows at least one prelim round");
                    mechanism_round_target(state, rho)?
                };
                let (policy, _) = zd_user_policy(&grid, &tables, target, config.residual_rule)?;
                let a = prev_level.expect("prelim phase is nonempty");
                let b = prev_fee.expect("prelim phase is nonempty");
                let fee = sample_from(policy.row(grid.index(a, b)), rng);
                (fee, Some(target), Some(branch))
            }
            (None, None, Phase::Main) => unreachable!("mechanism initialized at phase entry"),
        };

        // Then the miner responds.
        let level = miner.sample_level(rng);
        miner.observe_fee(fee);
        let s_m = tables.s_m[grid.index(level, fee)];
        let s_u = tables.s_u[grid.index(level, fee)];

        // Evolutionary update (main phase only; the prelim phase freezes
        // the mixed strategy while estimates accumulate).
        let expected_miner_payoff = if phase == Phase::Main {
            let (w_e, e_m) = match (config.play_mode, &config.user) {
                (PlayMode::Analytic, UserAgent::Mechanism) => {
                    (range_hi, e_target.expect("mechanism rounds carry a target"))
                }
                _ => {
                    let (w_e, _, e_m) = miner.strategy_values(&grid, &tables)?;
                    (w_e, e_m)
                }
            };
            miner.evolutionary_update(w_e, e_m);
            Some(e_m)
        } else {
            None
        };

        // Transition estimate sees every consecutive level pair.
        if let Some(pl) = prev_level {
            if let Some(est) = estimate.as_mut() {
                est.record(pl, level)?;
            } else if let Some(state) = mech.as_mut() {
                state.estimate.record(pl, level)?;
            }
        }

        records.push(RoundRecord {
            round,
            phase,
            fee_level: fee,
            miner_level: level,
            s_m,
            s_u,
            e_target,
            branch,
            p_earliest: miner.p_earliest,
            kappa: mech.as_ref().filter(|_| phase == Phase::Main).map(|s| s.kappa),
            start_time: (1.0 - grid.miner_value(level)) * config.params.round_duration,
            expected_miner_payoff,
        });

        prev_fee = Some(fee);
        prev_level = Some(level);
        last_user_payoff = s_u;
    }

    let trace = SimTrace {
        config_hash: config.hash(),
        summary: summarize(&grid, &records)?,
        records,
    };
    Ok(trace)
}

fn summarize(grid: &StrategyGrid, records: &[RoundRecord]) -> Result<RunSummary, SimError> {
    let main: Vec<&RoundRecord> = records.iter().filter(|r| r.phase == Phase::Main).collect();
    if main.is_empty() {
        return Err(SimError::EmptyMainPhase);
    }
    let tail = &main[main.len().saturating_sub(20)..];
    let mean = |vals: Vec<f64>| vals.iter().sum::<f64>() / vals.len() as f64;
    let pays: Vec<f64> = main.iter().filter_map(|r| r.expected_miner_payoff).collect();
    if pays.is_empty() {
        return Err(SimError::EmptyMainPhase);
    }
    Ok(RunSummary {
        final_p_earliest: main.last().unwrap().p_earliest,
        final_mean_fee: mean(tail.iter().map(|r| grid.fee_value(r.fee_level)).collect()),
        final_mean_start_time: mean(tail.iter().map(|r| r.start_time).collect()),
        long_run_miner_payoff: mean(pays),
    })
}

/// Mean and sample standard deviation across repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Cross-run statistics for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundAggregate {
    pub round: usize,
    pub phase: Phase,
    pub p_earliest: MeanStd,
    pub fee_value: MeanStd,
    pub start_time: MeanStd,
    pub s_m: MeanStd,
    pub s_u: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub traces: Vec<SimTrace>,
    pub aggregate: Vec<RoundAggregate>,
}

/// Runs `repeats` episodes on derived RNG streams (seed + episode index)
/// and aggregates the per-round series.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentResult, SimError> {
    config.validate()?;
    let grid = StrategyGrid::new(config.miner_levels, config.fee_levels, config.params.max_fee)?;
    let mut traces = Vec::with_capacity(config.repeats);
    for episode in 0..config.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(episode as u64));
        traces.push(run_episode(config, &mut rng)?);
    }
    let rounds = config.prelim_rounds + config.main_rounds;
    let mut aggregate = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let rows: Vec<&RoundRecord> = traces.iter().map(|t| &t.records[round]).collect();
        let collect = |f: &dyn Fn(&RoundRecord) -> f64| -> Vec<f64> {
            rows.iter().map(|r| f(r)).collect()
        };
        aggregate.push(RoundAggregate {
            round,
            phase: rows[0].phase,
            p_earliest: MeanStd::from_values(&collect(&|r| r.p_earliest)),
            fee_value: MeanStd::from_values(&collect(&|r| grid.fee_value(r.fee_level))),
            start_time: MeanStd::from_values(&collect(&|r| r.start_time)),
            s_m: MeanStd::from_values(&collect(&|r| r.s_m)),
            s_u: MeanStd::from_values(&collect(&|r| r.s_u)),
        });
    }
    Ok(ExperimentResult { traces, aggregate })
}
