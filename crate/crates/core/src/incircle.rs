//! Continuous-time model of one mining round: rigs switch on at start
//! times determined by their strategies, the block arrival follows a
//! shift-exponential race over aggregate active mining time, and payoffs
//! integrate win shares against the block-time density.
//!
//! Alongside the exact step-activation model, a logistic-smoothed
//! surrogate provides the differentiable quantities the supermodularity
//! conditions reference (activation slope, duration sensitivity, cost
//! sensitivity), plus finite-difference cross-partials of the payoff
//! integrals.

use log::warn;
use thiserror::Error;

/// Logistic sharpness of the smoothed activation indicator.
const SHARPNESS: f64 = 50.0;

/// Residual block probability allowed past the integration horizon.
const TAIL_MASS: f64 = 1e-9;

/// Relative accuracy requested from the quadrature.
const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("rate parameter must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("round duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("miner strategy {index} = {value} outside [0, 1]")]
    StrategyOutOfRange { index: usize, value: f64 },
    #[error("user fee {index} = {value} must be nonnegative and finite")]
    FeeOutOfRange { index: usize, value: f64 },
    #[error("{0} must be nonnegative and finite")]
    NegativeParam(&'static str),
    #[error("{0} must be positive and finite")]
    NonPositiveScale(&'static str),
    #[error("model has no miners")]
    NoMiners,
    #[error("index {index} out of bounds for {side} of size {len}")]
    IndexOutOfBounds { side: &'static str, index: usize, len: usize },
    #[error("resolution {got} too small, need at least {need}")]
    ResolutionTooSmall { got: usize, need: usize },
}

/// One mining round: strategies, fees, and economic scales.
///
/// Miner `i` with strategy `x_i` activates its rig at `(1 - x_i) * T`;
/// the block arrives with density `lambda * alpha_I(t) *
/// exp(-lambda * tau(t))` where `alpha_I` counts active rigs and `tau`
/// is aggregate active mining time. Mining income per block is
/// `subsidy + sum(fees)`, running a rig costs `cost_rate` per active
/// time unit, and user `k` pays `fee_cost_slope * y_k` for a packaging
/// probability proportional to its fee.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningSystemModel {
    pub lambda: f64,
    pub round_duration: f64,
    pub miner_strategies: Vec<f64>,
    pub user_fees: Vec<f64>,
    pub cost_rate: f64,
    pub subsidy: f64,
    pub eps_m: f64,
    pub sig_m: f64,
    pub eps_u: f64,
    pub sig_u: f64,
    pub user_value: f64,
    pub fee_cost_slope: f64,
}

impl Default for MiningSystemModel {
    fn default() -> Self {
        MiningSystemModel {
            lambda: 1.0,
            round_duration: 10.0,
            miner_strategies: vec![1.0, 1.0],
            user_fees: vec![5.0, 5.0],
            cost_rate: 0.0,
            subsidy: 6.25,
            eps_m: 1.0,
            sig_m: 1.0,
            eps_u: 1.0,
            sig_u: 1.0,
            user_value: 10.0,
            fee_cost_slope: 1.0,
        }
    }
}

impl MiningSystemModel {
    /// Validates every field and returns the model unchanged.
    pub fn validated(self) -> Result<Self, ModelError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(ModelError::InvalidRate(self.lambda));
        }
        if !(self.round_duration > 0.0) || !self.round_duration.is_finite() {
            return Err(ModelError::InvalidDuration(self.round_duration));
        }
        if self.miner_strategies.is_empty() {
            return Err(ModelError::NoMiners);
        }
        for (index, &value) in self.miner_strategies.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(ModelError::StrategyOutOfRange { index, value });
            }
        }
        for (index, &value) in self.user_fees.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(ModelError::FeeOutOfRange { index, value });
            }
        }
        for (name, v) in [("cost_rate", self.cost_rate), ("subsidy", self.subsidy)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ModelError::NegativeParam(name));
            }
        }
        for (name, v) in [
            ("eps_m", self.eps_m),
            ("sig_m", self.sig_m),
            ("eps_u", self.eps_u),
            ("sig_u", self.sig_u),
            ("user_value", self.user_value),
            ("fee_cost_slope", self.fee_cost_slope),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::NonPositiveScale(name));
            }
        }
        Ok(self)
    }

    pub fn n_miners(&self) -> usize {
        self.miner_strategies.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_fees.len()
    }

    /// Rig start time of miner `i`.
    pub fn start_time(&self, i: usize) -> f64 {
        (1.0 - self.miner_strategies[i]) * self.round_duration
    }

    /// Block reward plus all offered fees.
    pub fn block_income(&self) -> f64 {
        self.subsidy + self.user_fees.iter().sum::<f64>()
    }

    /// Number of rigs active at time `t` (activation is inclusive).
    pub fn active_count(&self, t: f64) -> usize {
        (0..self.n_miners()).filter(|&i| t >= self.start_time(i)).count()
    }

    /// Aggregate active mining time `tau(t)`: piecewise linear with slope
    /// equal to the active-rig count.
    pub fn aggregate_duration(&self, t: f64) -> f64 {
        (0..self.n_miners()).map(|i| (t - self.start_time(i)).max(0.0)).sum()
    }

    /// Sorted, deduplicated rig start times (the density's breakpoints).
    fn breakpoints(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = (0..self.n_miners()).map(|i| self.start_time(i)).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        ts
    }

    /// Maximal intervals of `[0, horizon]` on which the active-rig count
    /// is constant, as `(from, to, count)` triples. The count is read at
    /// the midpoint, so integrands built from it stay smooth on the
    /// closed interval even though the count itself jumps at the cuts.
    fn step_segments(&self) -> Vec<(f64, f64, f64)> {
        let horizon = self.horizon();
        let mut cuts: Vec<f64> =
            self.breakpoints().into_iter().filter(|&t| t > 0.0 && t < horizon).collect();
        cuts.push(0.0);
        cuts.push(horizon);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        cuts.windows(2)
            .map(|w| (w[0], w[1], self.active_count(0.5 * (w[0] + w[1])) as f64))
            .collect()
    }

    /// Time by which all but `TAIL_MASS / 2` of the block probability has
    /// arrived: the integration horizon.
    pub fn horizon(&self) -> f64 {
        let target = -(TAIL_MASS / 2.0).ln() / self.lambda;
        let bps = self.breakpoints();
        let mut t_prev = bps[0];
        let mut tau = 0.0;
        for window in bps.windows(2) {
            let slope = self.active_count(window[0]) as f64;
            let next_tau = tau + slope * (window[1] - window[0]);
            if next_tau >= target {
                return t_prev + (target - tau) / slope;
            }
            tau = next_tau;
            t_prev = window[1];
        }
        t_prev + (target - tau) / self.n_miners() as f64
    }
}

/// Trapezoid refinement with Richardson extrapolation on `[a, b]`.
fn integrate_segment<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    const MAX_LEVELS: usize = 20;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(MAX_LEVELS);
    let mut trap = 0.5 * (b - a) * (f(a) + f(b));
    rows.push(vec![trap]);
    let mut n = 1usize;
    for level in 1..MAX_LEVELS {
        let h = (b - a) / n as f64;
        let mids: f64 = (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum();
        trap = 0.5 * trap + 0.5 * h * mids;
        n *= 2;
        let prev = rows.last().unwrap().clone();
        let mut row = vec![trap];
        let mut pow4 = 1.0;
        for p in prev.iter() {
            pow4 *= 4.0;
            let last = *row.last().unwrap();
            row.push(last + (last - p) / (pow4 - 1.0));
        }
        let best = *row.last().unwrap();
        let prev_best = *prev.last().unwrap();
        rows.push(row);
        if level >= 4 && (best - prev_best).abs() <= tol * (1.0 + best.abs()) {
            return best;
        }
    }
    *rows.last().unwrap().last().unwrap()
}

/// Integrates `f` over `[0, horizon]`, splitting at the supplied
/// breakpoints so each segment is smooth.
fn integrate_piecewise<F: Fn(f64) -> f64>(f: &F, breakpoints: &[f64], horizon: f64) -> f64 {
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    cuts.push(0.0);
    cuts.push(horizon);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    cuts.windows(2).map(|w| integrate_segment(f, w[0], w[1], QUAD_TOL)).sum()
}

/// Block arrival density `lambda * alpha_I(t) * exp(-lambda * tau(t))`;
/// zero before the first rig starts.
pub fn block_time_density(model: &MiningSystemModel, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let alpha = model.active_count(t) as f64;
    if alpha == 0.0 {
        return 0.0;
    }
    model.lambda * alpha * (-model.lambda * model.aggregate_duration(t)).exp()
}

/// Expected payoff of miner `i`: win-share income minus running cost,
/// integrated against the block-time density over the horizon.
pub fn miner_expected_payoff(model: &MiningSystemModel, i: usize) -> Result<f64, ModelError> {
    if i >= model.n_miners() {
        return Err(ModelError::IndexOutOfBounds {
            side: "miners",
            index: i,
            len: model.n_miners(),
        });
    }
    let income = model.block_income();
    let t_i = model.start_time(i);
    let mut total = 0.0;
    for (a, b, alpha) in model.step_segments() {
        if alpha == 0.0 {
            continue;
        }
        let share = if 0.5 * (a + b) >= t_i { 1.0 / alpha } else { 0.0 };
        let f = |t: f64| {
            let cost = model.cost_rate * (t - t_i).max(0.0);
            let profit = model.eps_m * share * income - model.sig_m * cost;
            profit * model.lambda * alpha * (-model.lambda * model.aggregate_duration(t)).exp()
        };
        total += integrate_segment(&f, a, b, QUAD_TOL);
    }
    Ok(total)
}

/// Expected payoff of user `k`: net packaging value times the fee-share
/// packaging probability. All-zero fees give a degenerate probability;
/// that case is logged and scored as zero.
pub fn user_expected_payoff(model: &MiningSystemModel, k: usize) -> Result<f64, ModelError> {
    if k >= model.n_users() {
        return Err(ModelError::IndexOutOfBounds { side: "users", index: k, len: model.n_users() });
    }
    let total: f64 = model.user_fees.iter().sum();
    if total <= 0.0 {
        warn!("all user fees are zero; packaging probability degenerates to 0");
        return Ok(0.0);
    }
    let y_k = model.user_fees[k];
    let pro = y_k / total;
    Ok((model.eps_u * model.user_value - model.sig_u * model.fee_cost_slope * y_k) * pro)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        0.0
    } else {
        (1.0 + z.exp()).ln()
    }
}

/// Smoothed activation of a rig that starts at `start`: logistic ramp in
/// place of the step.
fn smooth_active(t: f64, start: f64) -> f64 {
    logistic(SHARPNESS * (t - start))
}

/// Smoothed active time of one rig since `start`:
/// integral of the logistic ramp from 0 to `t`.
fn smooth_duration(t: f64, start: f64) -> f64 {
    (softplus(SHARPNESS * (t - start)) - softplus(-SHARPNESS * start)) / SHARPNESS
}

/// Smoothed payoff of miner `i` with rig start times overridden by
/// `starts` (which may step outside `[0, T]` during finite differencing).
fn smooth_miner_payoff(model: &MiningSystemModel, starts: &[f64], i: usize) -> f64 {
    let income = model.block_income();
    let horizon = model.horizon() + model.round_duration;
    let f = |t: f64| {
        let alpha: f64 = starts.iter().map(|&s| smooth_active(t, s)).sum();
        if alpha <= 1e-300 {
            return 0.0;
        }
        let tau: f64 = starts.iter().map(|&s| smooth_duration(t, s)).sum();
        let share = smooth_active(t, starts[i]) / alpha;
        let cost = model.cost_rate * smooth_duration(t, starts[i]);
        let profit = model.eps_m * share * income - model.sig_m * cost;
        profit * model.lambda * alpha * (-model.lambda * tau).exp()
    };
    integrate_piecewise(&f, starts, horizon)
}

/// Closed-form user payoff with an overridden fee vector (finite
/// differencing may probe slightly negative fees).
fn user_payoff_at(model: &MiningSystemModel, fees: &[f64], k: usize) -> f64 {
    let total: f64 = fees.iter().sum();
    (model.eps_u * model.user_value - model.sig_u * model.fee_cost_slope * fees[k]) * fees[k]
        / total
}

/// Pointwise supermodularity evidence for the round.
///
/// `condition_a[i][j]` and `condition_b[i][j]` evaluate the two
/// miner-side inequalities for miner `i` at the `j`-th sampled time,
/// using the smoothed surrogate's finite-difference sensitivities:
/// activation slope `a`, aggregate-duration sensitivity `d`, and cost
/// sensitivity `g`, each with respect to the miner's own strategy.
/// `user_condition[k]` evaluates the user-side inequality at the model's
/// fee profile. `min_mixed_partial` is the smallest finite-difference
/// cross-partial of any payoff in any two distinct players' strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct SupermodularReport {
    pub times: Vec<f64>,
    pub condition_a: Vec<Vec<bool>>,
    pub condition_b: Vec<Vec<bool>>,
    pub user_condition: Vec<bool>,
    pub min_mixed_partial: f64,
}

impl SupermodularReport {
    /// True when every sampled condition holds.
    pub fn all_hold(&self) -> bool {
        self.condition_a.iter().all(|row| row.iter().all(|&b| b))
            && self.condition_b.iter().all(|row| row.iter().all(|&b| b))
            && self.user_condition.iter().all(|&b| b)
    }
}

/// Finite-difference step for the condition sensitivities.
const COND_STEP: f64 = 1e-4;
/// Finite-difference step for miner cross-partials.
const MIXED_STEP_MINER: f64 = 1e-3;
/// Finite-difference step for user cross-partials.
const MIXED_STEP_USER: f64 = 1e-4;
/// Slack allowed when calling an inequality satisfied.
const COND_SLACK: f64 = 1e-12;

/// Evaluates the supermodularity conditions on a time grid and estimates
/// cross-partials of the payoffs.
pub fn check_supermodular(
    model: &MiningSystemModel,
    grid_resolution: usize,
) -> Result<SupermodularReport, ModelError> {
    if grid_resolution < 3 {
        return Err(ModelError::ResolutionTooSmall { got: grid_resolution, need: 3 });
    }
    let n = model.n_miners();
    let horizon = model.horizon();
    let times: Vec<f64> =
        (1..=grid_resolution).map(|j| horizon * j as f64 / grid_resolution as f64).collect();
    let starts: Vec<f64> = (0..n).map(|i| model.start_time(i)).collect();
    let t_scale = model.round_duration;

    let mut condition_a = vec![vec![false; times.len()]; n];
    let mut condition_b = vec![vec![false; times.len()]; n];
    for i in 0..n {
        for (j, &t) in times.iter().enumerate() {
            // Perturbing x_i by +/-h shifts this rig's start by -/+ h*T.
            let shift = COND_STEP * t_scale;
            let alpha_at = |s_i: f64| -> f64 {
                starts
                    .iter()
                    .enumerate()
                    .map(|(m, &s)| smooth_active(t, if m == i { s_i } else { s }))
                    .sum()
            };
            let tau_at = |s_i: f64| -> f64 {
                starts
                    .iter()
                    .enumerate()
                    .map(|(m, &s)| smooth_duration(t, if m == i { s_i } else { s }))
                    .sum()
            };
            let s_i = starts[i];
            let a = (alpha_at(s_i - shift) - alpha_at(s_i + shift)) / (2.0 * COND_STEP);
            let d = (tau_at(s_i - shift) - tau_at(s_i + shift)) / (2.0 * COND_STEP);
            let g = model.cost_rate
                * (smooth_duration(t, s_i - shift) - smooth_duration(t, s_i + shift))
                / (2.0 * COND_STEP);
            let alpha_i = smooth_active(t, s_i);
            let own_cost = model.cost_rate * smooth_duration(t, s_i);
            condition_a[i][j] = alpha_i * model.lambda * d - a >= -COND_SLACK;
            condition_b[i][j] = g - own_cost * model.lambda * d >= -COND_SLACK;
        }
    }

    let user_condition: Vec<bool> = (0..model.n_users())
        .map(|k| {
            let y_k = model.user_fees[k];
            let others: f64 = model.user_fees.iter().sum::<f64>() - y_k;
            let net = model.eps_u * model.user_value - model.sig_u * model.fee_cost_slope * y_k;
            let lhs = net * (y_k - others)
                + (y_k + others) * y_k * model.sig_u * model.fee_cost_slope;
            lhs >= -COND_SLACK
        })
        .collect();

    let mut min_mixed = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if j <= i {
                continue;
            }
            let shift = MIXED_STEP_MINER * t_scale;
            let payoff = |di: f64, dj: f64| -> f64 {
                let mut s = starts.clone();
                s[i] -= di; // +h in x_i moves the start earlier
                s[j] -= dj;
                smooth_miner_payoff(model, &s, i)
            };
            let cross = (payoff(shift, shift) - payoff(shift, -shift)
                - payoff(-shift, shift)
                + payoff(-shift, -shift))
                / (4.0 * MIXED_STEP_MINER * MIXED_STEP_MINER);
            min_mixed = min_mixed.min(cross);
        }
    }
    for k in 0..model.n_users() {
        for l in 0..model.n_users() {
            if l <= k {
                continue;
            }
            let h = MIXED_STEP_USER;
            let total: f64 = model.user_fees.iter().sum();
            if total - 2.0 * h <= 0.0 {
                continue;
            }
            let payoff = |dk: f64, dl: f64| -> f64 {
                let mut fees = model.user_fees.clone();
                fees[k] += dk;
                fees[l] += dl;
                user_payoff_at(model, &fees, k)
            };
            let cross =
                (payoff(h, h) - payoff(h, -h) - payoff(-h, h) + payoff(-h, -h)) / (4.0 * h * h);
            min_mixed = min_mixed.min(cross);
        }
    }
    if !min_mixed.is_finite() {
        // No distinct player pairs: no cross-interactions to measure.
        min_mixed = 0.0;
    }

    Ok(SupermodularReport { times, condition_a, condition_b, user_condition, min_mixed_partial: min_mixed })
}

/// Trajectory of simultaneous miner best responses.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseTrajectory {
    /// Strategy profiles, starting with the model's own.
    pub profiles: Vec<Vec<f64>>,
    pub converged: bool,
}

/// Strategy candidates per miner in the best-response search.
const BR_GRID: usize = 100;

/// Iterates simultaneous best responses of the miners (fees held fixed),
/// each chosen by brute force over a uniform strategy grid. Stops at a
/// fixed point or after `max_iters` sweeps.
pub fn best_response_dynamics(
    model: &MiningSystemModel,
    max_iters: usize,
) -> Result<BestResponseTrajectory, ModelError> {
    if max_iters < 1 {
        return Err(ModelError::ResolutionTooSmall { got: max_iters, need: 1 });
    }
    let n = model.n_miners();
    let mut current = model.clone();
    let mut profiles = vec![current.miner_strategies.clone()];
    let mut converged = false;
    for _ in 0..max_iters {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut best_x = current.miner_strategies[i];
            let mut best_val = f64::NEG_INFINITY;
            for gi in 0..=BR_GRID {
                let x = gi as f64 / BR_GRID as f64;
                let mut probe = current.clone();
                probe.miner_strategies[i] = x;
                let val = miner_expected_payoff(&probe, i)?;
                if val > best_val + 1e-12 {
                    best_val = val;
                    best_x = x;
                }
            }
            next[i] = best_x;
        }
        let fixed = next
            .iter()
            .zip(current.miner_strategies.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12);
        current.miner_strategies = next.clone();
        profiles.push(next);
        if fixed {
            converged = true;
            break;
        }
    }
    Ok(BestResponseTrajectory { profiles, converged })
}

/// One sample of the income-versus-cost comparison behind the mining-gap
/// narrative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSample {
    pub t: f64,
    pub income: f64,
    pub cost: f64,
    pub in_gap: bool,
}

/// Samples expected instantaneous mining income (per-miner subsidy share
/// plus linearly accruing fees) against the running cost rate across the
/// round; `in_gap` marks times where mining loses money.
pub fn mining_gap_profile(
    model: &MiningSystemModel,
    time_resolution: usize,
) -> Result<Vec<GapSample>, ModelError> {
    if time_resolution < 2 {
        return Err(ModelError::ResolutionTooSmall { got: time_resolution, need: 2 });
    }
    let total_fees: f64 = model.user_fees.iter().sum();
    let subsidy_share = model.subsidy / model.n_miners() as f64;
    let samples = (0..time_resolution)
        .map(|j| {
            let t = model.round_duration * j as f64 / (time_resolution - 1) as f64;
            let income = subsidy_share + total_fees * t / model.round_duration;
            let cost = model.cost_rate;
            GapSample { t, income, cost, in_gap: income < cost }
        })
        .collect();
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_miner(x: f64, lambda: f64) -> MiningSystemModel {
        MiningSystemModel {
            lambda,
            miner_strategies: vec![x],
            user_fees: vec![],
            subsidy: 1.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap()
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let bad = MiningSystemModel { lambda: 0.0, ..MiningSystemModel::default() }.validated();
        assert_eq!(bad.unwrap_err(), ModelError::InvalidRate(0.0));
        let bad = MiningSystemModel {
            miner_strategies: vec![1.2],
            ..MiningSystemModel::default()
        }
        .validated();
        assert!(matches!(bad.unwrap_err(), ModelError::StrategyOutOfRange { index: 0, .. }));
        let bad = MiningSystemModel { miner_strategies: vec![], ..MiningSystemModel::default() }
            .validated();
        assert_eq!(bad.unwrap_err(), ModelError::NoMiners);
        let bad = MiningSystemModel { eps_u: 0.0, ..MiningSystemModel::default() }.validated();
        assert_eq!(bad.unwrap_err(), ModelError::NonPositiveScale("eps_u"));
    }

    #[test]
    fn density_reduces_to_unit_exponential() {
        let model = single_miner(1.0, 1.0);
        assert_abs_diff_eq!(block_time_density(&model, 0.0), 1.0, epsilon = 1e-12);
        for t in [0.1, 0.5, 1.0, 3.0] {
            assert_abs_diff_eq!(block_time_density(&model, t), (-t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn density_is_zero_before_first_start() {
        let model = single_miner(0.5, 1.0);
        for t in [0.0, 1.0, 4.9] {
            assert_eq!(block_time_density(&model, t), 0.0);
        }
        assert!(block_time_density(&model, 5.0) > 0.0);
    }

    #[test]
    fn density_two_miners_closed_form() {
        let model = MiningSystemModel {
            miner_strategies: vec![1.0, 1.0],
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        for t in [0.0, 0.2, 1.0, 2.5] {
            assert_abs_diff_eq!(
                block_time_density(&model, t),
                2.0 * (-2.0 * t).exp(),
                epsilon = 1e-12
            );
        }
    }

    /// Oracle: piecewise closed form of the duration integral.
    #[test]
    fn aggregate_duration_piecewise_linear() {
        let model = MiningSystemModel {
            miner_strategies: vec![1.0, 0.5],
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        // Starts at 0 and 5.
        assert_abs_diff_eq!(model.aggregate_duration(3.0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(model.aggregate_duration(5.0), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(model.aggregate_duration(7.0), 7.0 + 2.0, epsilon = 1e-12);
        assert_eq!(model.active_count(4.9), 1);
        assert_eq!(model.active_count(5.0), 2);
    }

    #[test]
    fn horizon_leaves_negligible_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let n = rng.gen_range(1..=4);
            let model = MiningSystemModel {
                lambda: rng.gen_range(0.2..3.0),
                miner_strategies: (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
                ..MiningSystemModel::default()
            }
            .validated()
            .unwrap();
            let h = model.horizon();
            let tail = (-model.lambda * model.aggregate_duration(h)).exp();
            assert!(tail < 1e-9, "tail {tail}");
        }
    }

    /// Invariant: quadrature of the density plus the analytic tail is 1.
    #[test]
    fn density_normalizes_with_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let n = rng.gen_range(1..=5);
            let model = MiningSystemModel {
                lambda: rng.gen_range(0.1..4.0),
                miner_strategies: (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
                ..MiningSystemModel::default()
            }
            .validated()
            .unwrap();
            let h = model.horizon();
            let mass: f64 = model
                .step_segments()
                .into_iter()
                .map(|(a, b, alpha)| {
                    let f = |t: f64| {
                        model.lambda
                            * alpha
                            * (-model.lambda * model.aggregate_duration(t)).exp()
                    };
                    integrate_segment(&f, a, b, QUAD_TOL)
                })
                .sum();
            let tail = (-model.lambda * model.aggregate_duration(h)).exp();
            assert_abs_diff_eq!(mass + tail, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn lone_fullpower_miner_wins_everything() {
        let model = MiningSystemModel {
            subsidy: 1.0,
            user_fees: vec![],
            miner_strategies: vec![1.0],
            cost_rate: 0.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let u = miner_expected_payoff(&model, 0).unwrap();
        assert_abs_diff_eq!(u, 1.0, epsilon = 1e-6);
    }

    /// Oracle: with zero income the payoff is minus the expected active
    /// time, which for a rig live from t=0 is the mean block time 1/lambda.
    #[test]
    fn lone_miner_cost_equals_mean_block_time() {
        for (lambda, cost) in [(1.0, 1.0), (2.0, 0.7), (0.5, 3.0)] {
            let model = MiningSystemModel {
                lambda,
                subsidy: 0.0,
                user_fees: vec![],
                miner_strategies: vec![1.0],
                cost_rate: cost,
                ..MiningSystemModel::default()
            }
            .validated()
            .unwrap();
            let u = miner_expected_payoff(&model, 0).unwrap();
            assert_abs_diff_eq!(u, -cost / lambda, epsilon = 1e-6);
        }
    }

    #[test]
    fn symmetric_miners_split_income() {
        let model = MiningSystemModel {
            subsidy: 3.0,
            user_fees: vec![2.0, 2.0],
            miner_strategies: vec![1.0, 1.0],
            cost_rate: 0.0,
            eps_m: 0.8,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let u0 = miner_expected_payoff(&model, 0).unwrap();
        let u1 = miner_expected_payoff(&model, 1).unwrap();
        assert_abs_diff_eq!(u0, u1, epsilon = 1e-9);
        assert_abs_diff_eq!(u0, 0.8 * 7.0 / 2.0, epsilon = 1e-5);
    }

    #[test]
    fn permuting_miners_permutes_payoffs() {
        let model = MiningSystemModel {
            miner_strategies: vec![0.3, 0.8],
            cost_rate: 0.2,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let swapped = MiningSystemModel {
            miner_strategies: vec![0.8, 0.3],
            ..model.clone()
        };
        let u0 = miner_expected_payoff(&model, 0).unwrap();
        let u1 = miner_expected_payoff(&model, 1).unwrap();
        assert_abs_diff_eq!(u0, miner_expected_payoff(&swapped, 1).unwrap(), epsilon = 1e-9);
        assert_abs_diff_eq!(u1, miner_expected_payoff(&swapped, 0).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn user_payoff_formula_points() {
        let model = MiningSystemModel {
            user_fees: vec![2.0, 8.0],
            eps_u: 1.0,
            sig_u: 1.0,
            user_value: 10.0,
            fee_cost_slope: 1.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        // Pro = 0.2, net value 10 - 2.
        assert_abs_diff_eq!(user_expected_payoff(&model, 0).unwrap(), 8.0 * 0.2, epsilon = 1e-12);

        let zero = MiningSystemModel { user_fees: vec![0.0, 0.0], ..model.clone() };
        assert_eq!(user_expected_payoff(&zero, 0).unwrap(), 0.0);
        assert!(user_expected_payoff(&model, 5).is_err());
    }

    #[test]
    fn packaging_shares_sum_to_one() {
        let model = MiningSystemModel {
            user_fees: vec![1.0, 2.5, 4.0, 0.5],
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let total: f64 = model.user_fees.iter().sum();
        let shares: f64 = model.user_fees.iter().map(|y| y / total).sum();
        assert_abs_diff_eq!(shares, 1.0, epsilon = 1e-12);
    }

    /// Oracle for the finite-difference sensitivities: analytic partials
    /// of the smoothed activation and duration.
    #[test]
    fn smoothed_sensitivities_match_analytic_partials() {
        let t = 2.0;
        let t_i = 1.5;
        let cap_t = 10.0;
        let h = 1e-4;
        let shift = h * cap_t;
        let a_fd = (smooth_active(t, t_i - shift) - smooth_active(t, t_i + shift)) / (2.0 * h);
        let z = SHARPNESS * (t - t_i);
        let sig = logistic(z);
        let a_exact = SHARPNESS * cap_t * sig * (1.0 - sig);
        assert_abs_diff_eq!(a_fd, a_exact, epsilon = 1e-3 * a_exact.abs().max(1.0));

        let d_fd = (smooth_duration(t, t_i - shift) - smooth_duration(t, t_i + shift)) / (2.0 * h);
        let d_exact = cap_t * (logistic(SHARPNESS * (t - t_i)) - logistic(-SHARPNESS * t_i));
        assert_abs_diff_eq!(d_fd, d_exact, epsilon = 1e-3 * d_exact.abs().max(1.0));
    }

    #[test]
    fn supermodular_holds_for_costless_full_power() {
        let model = MiningSystemModel {
            miner_strategies: vec![1.0, 1.0],
            user_fees: vec![3.0, 3.0],
            cost_rate: 0.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let report = check_supermodular(&model, 8).unwrap();
        assert!(report.all_hold(), "{report:?}");
        let scale = 1.0_f64.max(model.block_income());
        assert!(
            report.min_mixed_partial >= -1e-4 * scale,
            "min mixed partial {}",
            report.min_mixed_partial
        );
    }

    #[test]
    fn running_cost_breaks_condition_b() {
        let model = MiningSystemModel {
            miner_strategies: vec![1.0, 1.0],
            user_fees: vec![3.0, 3.0],
            cost_rate: 0.5,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let report = check_supermodular(&model, 8).unwrap();
        // Once a rig has been active longer than the mean block time the
        // cost inequality fails.
        assert!(report.condition_b.iter().any(|row| row.iter().any(|&b| !b)));
        assert!(!report.all_hold());
    }

    #[test]
    fn lopsided_fees_break_user_condition() {
        let model = MiningSystemModel {
            user_fees: vec![0.1, 5.0, 5.0],
            user_value: 50.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let report = check_supermodular(&model, 4).unwrap();
        assert!(!report.user_condition[0]);
        assert!(report.user_condition[1] && report.user_condition[2]);
    }

    /// Oracle: closed-form cross-partial of the user payoff versus the
    /// finite-difference estimate.
    #[test]
    fn user_mixed_partial_matches_closed_form() {
        let model = MiningSystemModel {
            user_fees: vec![2.0, 3.0],
            user_value: 10.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let (y_k, others) = (2.0, 3.0);
        let a = model.eps_u * model.user_value;
        let b = model.sig_u * model.fee_cost_slope;
        let expect = (a * (y_k - others) + 2.0 * b * y_k * others) / (y_k + others).powi(3);
        let h = MIXED_STEP_USER;
        let payoff = |dk: f64, dl: f64| {
            user_payoff_at(&model, &[2.0 + dk, 3.0 + dl], 0)
        };
        let fd = (payoff(h, h) - payoff(h, -h) - payoff(-h, h) + payoff(-h, -h)) / (4.0 * h * h);
        assert_abs_diff_eq!(fd, expect, epsilon = 1e-6);
        let report = check_supermodular(&model, 4).unwrap();
        assert!(report.min_mixed_partial <= expect + 1e-4);
    }

    #[test]
    fn best_response_fixed_point_at_full_power() {
        let model = MiningSystemModel {
            miner_strategies: vec![1.0, 1.0],
            cost_rate: 0.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let traj = best_response_dynamics(&model, 5).unwrap();
        assert!(traj.converged);
        assert_eq!(traj.profiles.len(), 2);
        assert_eq!(traj.profiles[1], vec![1.0, 1.0]);
    }

    #[test]
    fn best_response_climbs_monotonically_without_cost() {
        let model = MiningSystemModel {
            miner_strategies: vec![0.2, 0.6],
            cost_rate: 0.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let traj = best_response_dynamics(&model, 10).unwrap();
        assert!(traj.converged);
        for pair in traj.profiles.windows(2) {
            for (prev, next) in pair[0].iter().zip(pair[1].iter()) {
                assert!(next >= prev);
            }
        }
        let last = traj.profiles.last().unwrap();
        assert_eq!(last, &vec![1.0, 1.0]);
    }

    #[test]
    fn symmetric_best_response_stays_symmetric() {
        let model = MiningSystemModel {
            miner_strategies: vec![0.4, 0.4],
            cost_rate: 0.1,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        let traj = best_response_dynamics(&model, 15).unwrap();
        for profile in &traj.profiles {
            assert_abs_diff_eq!(profile[0], profile[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn gap_profile_crossing_matches_analytic_point() {
        let model = MiningSystemModel {
            miner_strategies: vec![1.0, 1.0],
            user_fees: vec![1.0, 1.0],
            subsidy: 1.0,
            cost_rate: 1.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        // income(t) = 0.5 + 0.2 t crosses cost 1.0 at t = 2.5.
        let res = 101;
        let samples = mining_gap_profile(&model, res).unwrap();
        assert_eq!(samples.len(), res);
        let crossing = samples.iter().find(|s| !s.in_gap).unwrap().t;
        let step = model.round_duration / (res - 1) as f64;
        assert!((crossing - 2.5).abs() <= step, "crossing {crossing}");
        let gap_len = samples.iter().filter(|s| s.in_gap).count() as f64 * step;
        assert!((gap_len - 2.5).abs() <= 2.0 * step);
    }

    #[test]
    fn gap_profile_trivial_cases() {
        let free = MiningSystemModel {
            cost_rate: 0.0,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        assert!(mining_gap_profile(&free, 10).unwrap().iter().all(|s| !s.in_gap));

        let hopeless = MiningSystemModel {
            user_fees: vec![0.0],
            subsidy: 0.0,
            cost_rate: 0.3,
            ..MiningSystemModel::default()
        }
        .validated()
        .unwrap();
        assert!(mining_gap_profile(&hopeless, 10).unwrap().iter().all(|s| s.in_gap));
        assert!(mining_gap_profile(&hopeless, 1).is_err());
    }
}
