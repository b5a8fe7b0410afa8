//! Round-playing agents: the evolutionary miner side and the classical
//! user-side baselines.
//!
//! The miner keeps a mixed strategy split into the probability of the
//! earliest start-up level and a fixed-shape residual over the rest. Each
//! round it multiplies the earliest-level probability by the ratio of the
//! earliest strategy's value to its own expected payoff, so strategies
//! whose relative value exceeds the average gain mass.

use crate::zdengine::{PayoffTables, StrategyGrid};
use rand::Rng;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("need at least two levels per side")]
    DegenerateGrid,
    #[error("no observations recorded yet")]
    NoObservations,
    #[error("window length must be at least 1")]
    EmptyWindow,
}

/// How empirical frequencies aggregate history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqMode {
    /// All observations since the start of the episode.
    Cumulative,
    /// Only the most recent `n` observations.
    Windowed(usize),
}

/// Mixed strategy and empirical memory of the evolutionary miner.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionaryMinerState {
    n_levels: usize,
    n_fees: usize,
    /// Probability of the earliest (top) start-up level.
    pub p_earliest: f64,
    /// Shape of the non-earliest mass; sums to 1 over levels `0..top`.
    residual: Vec<f64>,
    mode: FreqMode,
    level_counts: Vec<u64>,
    fee_counts: Vec<u64>,
    level_window: VecDeque<usize>,
    fee_window: VecDeque<usize>,
    pub rounds_seen: u64,
    pub skipped_updates: u64,
}

/// Result of one evolutionary step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Applied { ratio: f64 },
    /// Expected payoff was not positive; the multiplicative rule is
    /// undefined there, so the round is skipped and counted.
    SkippedNonPositive,
}

impl EvolutionaryMinerState {
    /// Start with earliest-level probability `p0` and the residual mass
    /// spread uniformly over the other levels.
    pub fn new(grid: &StrategyGrid, p0: f64, mode: FreqMode) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&p0) || !p0.is_finite() {
            return Err(AgentError::InvalidProbability(p0));
        }
        let (n_levels, n_fees) = (grid.n_miner(), grid.n_fee());
        if n_levels < 2 {
            return Err(AgentError::DegenerateGrid);
        }
        if let FreqMode::Windowed(0) = mode {
            return Err(AgentError::EmptyWindow);
        }
        Ok(EvolutionaryMinerState {
            n_levels,
            n_fees,
            p_earliest: p0,
            residual: vec![1.0 / (n_levels - 1) as f64; n_levels - 1],
            mode,
            level_counts: vec![0; n_levels],
            fee_counts: vec![0; n_fees],
            level_window: VecDeque::new(),
            fee_window: VecDeque::new(),
            rounds_seen: 0,
            skipped_updates: 0,
        })
    }

    /// Full mixed strategy over start-up levels.
    pub fn strategy_dist(&self) -> Vec<f64> {
        let mut dist: Vec<f64> =
            self.residual.iter().map(|w| w * (1.0 - self.p_earliest)).collect();
        dist.push(self.p_earliest);
        dist
    }

    /// Draws a start-up level and records it in the own-level frequencies.
    pub fn sample_level<R: Rng>(&mut self, rng: &mut R) -> usize {
        let top = self.n_levels - 1;
        let mut u: f64 = rng.gen();
        let level = if u < self.p_earliest {
            top
        } else {
            u = (u - self.p_earliest) / (1.0 - self.p_earliest).max(f64::MIN_POSITIVE);
            let mut acc = 0.0;
            let mut chosen = top - 1;
            for (l, w) in self.residual.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = l;
                    break;
                }
            }
            chosen
        };
        self.record_level(level);
        level
    }

    fn record_level(&mut self, level: usize) {
        self.level_counts[level] += 1;
        self.rounds_seen += 1;
        if let FreqMode::Windowed(n) = self.mode {
            self.level_window.push_back(level);
            if self.level_window.len() > n {
                self.level_window.pop_front();
            }
        }
    }

    /// Records the fee level the user side played this round.
    pub fn observe_fee(&mut self, fee_level: usize) {
        self.fee_counts[fee_level] += 1;
        if let FreqMode::Windowed(n) = self.mode {
            self.fee_window.push_back(fee_level);
            if self.fee_window.len() > n {
                self.fee_window.pop_front();
            }
        }
    }

    fn freq(counts: &[u64], window: &VecDeque<usize>, mode: FreqMode, len: usize) -> Vec<f64> {
        match mode {
            FreqMode::Cumulative => {
                let total: u64 = counts.iter().sum();
                counts.iter().map(|&c| c as f64 / total as f64).collect()
            }
            FreqMode::Windowed(_) => {
                let mut out = vec![0.0; len];
                for &v in window {
                    out[v] += 1.0;
                }
                let total = window.len() as f64;
                out.iter_mut().for_each(|v| *v /= total);
                out
            }
        }
    }

    /// Empirical distribution of own start-up levels.
    pub fn freq_levels(&self) -> Result<Vec<f64>, AgentError> {
        if self.level_counts.iter().sum::<u64>() == 0 {
            return Err(AgentError::NoObservations);
        }
        Ok(Self::freq(&self.level_counts, &self.level_window, self.mode, self.n_levels))
    }

    /// Empirical distribution of observed fee levels.
    pub fn freq_fees(&self) -> Result<Vec<f64>, AgentError> {
        if self.fee_counts.iter().sum::<u64>() == 0 {
            return Err(AgentError::NoObservations);
        }
        Ok(Self::freq(&self.fee_counts, &self.fee_window, self.mode, self.n_fees))
    }

    /// Frequency-weighted strategy values: per-level values
    /// `W_r = sum_s g_s * S_m(level r, fee s)`, the earliest-level value
    /// `W_e = W_top`, and the own expected payoff `E_m = sum_r f_r * W_r`.
    pub fn strategy_values(
        &self,
        grid: &StrategyGrid,
        tables: &PayoffTables,
    ) -> Result<(f64, Vec<f64>, f64), AgentError> {
        let g = self.freq_fees()?;
        let f = self.freq_levels()?;
        let w_levels: Vec<f64> = (0..self.n_levels)
            .map(|r| (0..self.n_fees).map(|s| g[s] * tables.s_m[grid.index(r, s)]).sum())
            .collect();
        let w_e = w_levels[self.n_levels - 1];
        let e_m = f.iter().zip(w_levels.iter()).map(|(fr, wr)| fr * wr).sum();
        Ok((w_e, w_levels, e_m))
    }

    /// Multiplicative update `p <- min(1, p * w_e / e_m)`; the residual
    /// shape is unchanged, so the rest of the mass rescales
    /// proportionally.
    pub fn evolutionary_update(&mut self, w_e: f64, e_m: f64) -> UpdateOutcome {
        if !(e_m > 0.0) || !w_e.is_finite() {
            self.skipped_updates += 1;
            return UpdateOutcome::SkippedNonPositive;
        }
        let ratio = w_e / e_m;
        self.p_earliest = (self.p_earliest * ratio).clamp(0.0, 1.0);
        UpdateOutcome::Applied { ratio }
    }
}

/// Classical user-side strategies played against the evolutionary miner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    AllC,
    AllD,
    Wsls,
    Tft,
    Random,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::AllC => "all_c",
            BaselineKind::AllD => "all_d",
            BaselineKind::Wsls => "wsls",
            BaselineKind::Tft => "tft",
            BaselineKind::Random => "random",
        }
    }

    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::AllC,
        BaselineKind::AllD,
        BaselineKind::Wsls,
        BaselineKind::Tft,
        BaselineKind::Random,
    ];
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_c" => Ok(BaselineKind::AllC),
            "all_d" => Ok(BaselineKind::AllD),
            "wsls" => Ok(BaselineKind::Wsls),
            "tft" => Ok(BaselineKind::Tft),
            "random" => Ok(BaselineKind::Random),
            other => Err(format!(
                "unknown baseline '{other}' (expected all_c, all_d, wsls, tft, random)"
            )),
        }
    }
}

/// Stateful baseline player.
///
/// The constant strategies ignore history entirely. The reactive ones
/// open with a high fee with probability `q0` (and the low fee otherwise),
/// then follow their rule: win-stay-lose-shift repeats its fee while its
/// own payoff stays at or above the running mean and flips to the
/// complementary level otherwise; tit-for-tat mirrors the miner's last
/// level onto the complementary fee level.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineUser {
    pub kind: BaselineKind,
    q0: f64,
    last_fee: Option<usize>,
    payoff_count: u64,
    payoff_mean: f64,
}

impl BaselineUser {
    pub fn new(kind: BaselineKind, q0: f64) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&q0) || !q0.is_finite() {
            return Err(AgentError::InvalidProbability(q0));
        }
        Ok(BaselineUser { kind, q0, last_fee: None, payoff_count: 0, payoff_mean: 0.0 })
    }

    /// Fee level for the next round. `last_round` carries the previous
    /// round's miner level and this player's realized payoff; `None` on
    /// the opening round.
    pub fn next_fee<R: Rng>(
        &mut self,
        last_round: Option<(usize, f64)>,
        grid: &StrategyGrid,
        rng: &mut R,
    ) -> usize {
        let top = grid.fee_levels;
        if let Some((_, payoff)) = last_round {
            self.payoff_count += 1;
            self.payoff_mean += (payoff - self.payoff_mean) / self.payoff_count as f64;
        }
        let fee = match self.kind {
            BaselineKind::AllC => top,
            BaselineKind::AllD => 0,
            BaselineKind::Random => rng.gen_range(0..=top),
            BaselineKind::Wsls => match (last_round, self.last_fee) {
                (Some((_, payoff)), Some(prev)) => {
                    if payoff >= self.payoff_mean {
                        prev
                    } else {
                        top - prev
                    }
                }
                _ => self.opening_fee(top, rng),
            },
            BaselineKind::Tft => match last_round {
                Some((miner_level, _)) => {
                    let scaled =
                        (miner_level as f64 * top as f64 / grid.miner_levels as f64).round();
                    top - (scaled as usize).min(top)
                }
                None => self.opening_fee(top, rng),
            },
        };
        self.last_fee = Some(fee);
        fee
    }

    fn opening_fee<R: Rng>(&self, top: usize, rng: &mut R) -> usize {
        if rng.gen::<f64>() < self.q0 {
            top
        } else {
            0
        }
    }
}
