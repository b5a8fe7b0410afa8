//! Incentive mechanism that steers the zero-determinant fee policy.
//!
//! The mechanism watches the miner side's start-up levels, maintains a
//! smoothed estimate of the level-to-level transition matrix, classifies
//! the miner as early-bird or late-bird, and produces the miner payoff the
//! fee policy should enforce next round: rewards saturate toward the top
//! of the controllable range, penalties decay toward the bottom.

use thiserror::Error;

/// Multiplicative state `kappa` is capped here to keep the exponentials
/// finite while preserving saturation.
const KAPPA_CAP: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error("payoff bounds must satisfy min < max, got ({min}, {max})")]
    InvalidBounds { min: f64, max: f64 },
    #[error("steepness parameter {0} must be positive and finite")]
    NonPositiveSteepness(&'static str),
    #[error("level {level} outside 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },
}

/// Add-one-smoothed estimate of the miner's level-to-level transition
/// matrix: row = previous start-up level, column = next level.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEstimate {
    n_levels: usize,
    counts: Vec<u64>,
}

impl TransitionEstimate {
    /// `n_levels` distinct start-up levels (grid levels + 1).
    pub fn new(n_levels: usize) -> Self {
        TransitionEstimate { n_levels, counts: vec![0; n_levels * n_levels] }
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn record(&mut self, prev: usize, next: usize) -> Result<(), MechanismError> {
        let max = self.n_levels - 1;
        if prev >= self.n_levels || next >= self.n_levels {
            return Err(MechanismError::LevelOutOfRange { level: prev.max(next), max });
        }
        self.counts[prev * self.n_levels + next] += 1;
        Ok(())
    }

    /// Smoothed transition probability: `(count + 1) / (row + n_levels)`.
    pub fn prob(&self, prev: usize, next: usize) -> f64 {
        let row = &self.counts[prev * self.n_levels..(prev + 1) * self.n_levels];
        let total: u64 = row.iter().sum();
        (row[next] as f64 + 1.0) / (total as f64 + self.n_levels as f64)
    }

    /// Mean probability, across previous levels, of moving to the top
    /// (earliest) level. Equals `1 / n_levels` with no observations.
    pub fn mean_top_prob(&self) -> f64 {
        let top = self.n_levels - 1;
        let sum: f64 = (0..self.n_levels).map(|prev| self.prob(prev, top)).sum();
        sum / self.n_levels as f64
    }
}

/// Which arm of the mechanism produced a round's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Opening target interpolated from the prior estimate.
    Init,
    Reward,
    Penalty,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::Init => "init",
            Branch::Reward => "reward",
            Branch::Penalty => "penalty",
        })
    }
}

/// Mechanism state carried across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismState {
    pub estimate: TransitionEstimate,
    pub kappa: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub omega_reward: f64,
    pub omega_penalty: f64,
}

/// Builds the mechanism and returns it with the opening target
/// `kappa0 * (e_max - e_min) + e_min`, where `kappa0` is the estimate's
/// mean top-level probability.
pub fn init_mechanism(
    estimate: TransitionEstimate,
    e_min: f64,
    e_max: f64,
    omega_reward: f64,
    omega_penalty: f64,
) -> Result<(MechanismState, f64), MechanismError> {
    if !(e_min < e_max) || !e_min.is_finite() || !e_max.is_finite() {
        return Err(MechanismError::InvalidBounds { min: e_min, max: e_max });
    }
    if !(omega_reward > 0.0) || !omega_reward.is_finite() {
        return Err(MechanismError::NonPositiveSteepness("omega_reward"));
    }
    if !(omega_penalty > 0.0) || !omega_penalty.is_finite() {
        return Err(MechanismError::NonPositiveSteepness("omega_penalty"));
    }
    let kappa0 = estimate.mean_top_prob();
    let opening = kappa0 * (e_max - e_min) + e_min;
    let state =
        MechanismState { estimate, kappa: kappa0, e_min, e_max, omega_reward, omega_penalty };
    Ok((state, opening))
}

/// True when, from the given previous level, the estimated most likely
/// next level is the earliest one (ties count in its favor).
pub fn classify_early_bird(estimate: &TransitionEstimate, prev_level: usize) -> bool {
    let n = estimate.n_levels();
    let top = n - 1;
    let p_top = estimate.prob(prev_level, top);
    (0..n).all(|next| p_top >= estimate.prob(prev_level, next))
}

/// Reward arm: saturating ascent toward `e_max` as `kappa` grows.
pub fn reward_target(e_max: f64, omega: f64, kappa: f64) -> f64 {
    e_max / (1.0 + (-omega * kappa).exp())
}

/// Penalty arm: decay from `1.5 * e_min` at `kappa = 0` toward `e_min`.
pub fn penalty_target(e_min: f64, omega: f64, kappa: f64) -> f64 {
    e_min * (1.0 / (1.0 + (omega * kappa).exp()) + 1.0)
}

/// Advances the mechanism one round given the miner's last observed level
/// and returns the enforcement target with the branch taken.
///
/// Early-bird miners compound `kappa` by `1 + P(prev -> top)` and receive
/// the reward curve; late-bird miners compound by `1 + 1 / P(prev -> top)`
/// and receive the penalty curve. Targets are clamped to the controllable
/// range and `kappa` is capped to keep the curves saturated but finite.
pub fn mechanism_round_target(
    state: &mut MechanismState,
    prev_level: usize,
) -> Result<(f64, Branch), MechanismError> {
    let n = state.estimate.n_levels();
    if prev_level >= n {
        return Err(MechanismError::LevelOutOfRange { level: prev_level, max: n - 1 });
    }
    let p_top = state.estimate.prob(prev_level, n - 1);
    let (raw, branch) = if classify_early_bird(&state.estimate, prev_level) {
        state.kappa *= 1.0 + p_top;
        state.kappa = state.kappa.min(KAPPA_CAP);
        (reward_target(state.e_max, state.omega_reward, state.kappa), Branch::Reward)
    } else {
        state.kappa *= 1.0 + 1.0 / p_top;
        state.kappa = state.kappa.min(KAPPA_CAP);
        (penalty_target(state.e_min, state.omega_penalty, state.kappa), Branch::Penalty)
    };
    Ok((raw.clamp(state.e_min, state.e_max), branch))
}
