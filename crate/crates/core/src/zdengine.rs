//! Discretized Markov game between the user side and the miner side, and
//! zero-determinant policy synthesis for the user side.
//!
//! Joint outcomes are pairs `(a, b)` of a miner start-up level `a` in
//! `0..=miner_levels` and a fee level `b` in `0..=fee_levels`. Play is
//! sequential within a round: the user commits a fee level conditioned on
//! the previous outcome, then the miner responds to the fee. The induced
//! chain over outcomes has transition probability
//! `q(s | a, b) * p(r | s)` from `(a, b)` to `(r, s)`.
//!
//! A zero-determinant user policy enforces `alpha * E_m + gamma = 0` on the
//! stationary distribution for every miner policy, pinning the miner side's
//! long-run payoff at `-gamma / alpha` anywhere inside the controllable
//! range.

use crate::payoff::SidePayoffModel;
use rand::Rng;
use thiserror::Error;

/// Tolerance accepted when validating row sums of externally supplied
/// policies and matrices.
const ROW_SUM_TOL: f64 = 1e-9;

/// Successive-iterate residual required of the power iteration.
const POWER_TOL: f64 = 1e-12;

/// Mix toward the uniform distribution that guarantees a unique fixed
/// point on reducible chains; reported in [`StationarySolution`].
const DAMPING: f64 = 1e-8;

/// Hard cap on power-iteration steps.
const MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ZdError {
    #[error("grid must have at least one miner level and one fee level")]
    GridTooSmall,
    #[error("row {row} sums to {sum}, expected 1")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("power iteration failed to converge after {iterations} steps (residual {residual})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("target {target} outside controllable payoff range ({min}, {max})")]
    InfeasibleTarget { target: f64, min: f64, max: f64 },
    #[error("no coefficient of magnitude above 1e-12 satisfies the policy bounds")]
    DegenerateTarget,
    #[error("residual rule cannot complete a valid policy for this target")]
    ResidualRuleInfeasible,
    #[error("payoff model rejected a grid point: {0}")]
    PayoffModel(String),
}

/// Discretization of the two strategy spaces.
///
/// The miner side's `[0, 1]` is split into `miner_levels` equal steps and
/// the fee space `[0, max_fee]` into `fee_levels` steps, so there are
/// `(miner_levels + 1) * (fee_levels + 1)` joint outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyGrid {
    pub miner_levels: usize,
    pub fee_levels: usize,
    pub max_fee: f64,
}

impl StrategyGrid {
    pub fn new(miner_levels: usize, fee_levels: usize, max_fee: f64) -> Result<Self, ZdError> {
        if miner_levels == 0 || fee_levels == 0 || !(max_fee > 0.0) {
            return Err(ZdError::GridTooSmall);
        }
        Ok(StrategyGrid { miner_levels, fee_levels, max_fee })
    }

    /// Width of one miner level: `miner_levels * miner_step() == 1`.
    pub fn miner_step(&self) -> f64 {
        1.0 / self.miner_levels as f64
    }

    /// Width of one fee level: `fee_levels * fee_step() == max_fee`.
    pub fn fee_step(&self) -> f64 {
        self.max_fee / self.fee_levels as f64
    }

    pub fn miner_value(&self, a: usize) -> f64 {
        a as f64 / self.miner_levels as f64
    }

    pub fn fee_value(&self, b: usize) -> f64 {
        // Divide first: level `fee_levels` then lands on `max_fee` exactly
        // instead of up to one ulp above it.
        self.max_fee * (b as f64 / self.fee_levels as f64)
    }

    pub fn n_miner(&self) -> usize {
        self.miner_levels + 1
    }

    pub fn n_fee(&self) -> usize {
        self.fee_levels + 1
    }

    /// Number of joint outcomes.
    pub fn outcomes(&self) -> usize {
        self.n_miner() * self.n_fee()
    }

    /// Row/column index of outcome `(a, b)`: fee level varies fastest.
    pub fn index(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < self.n_miner() && b < self.n_fee());
        a * self.n_fee() + b
    }

    /// Inverse of [`StrategyGrid::index`].
    pub fn outcome(&self, idx: usize) -> (usize, usize) {
        (idx / self.n_fee(), idx % self.n_fee())
    }
}

/// Stage payoffs tabulated on the outcome lattice, indexed by
/// [`StrategyGrid::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffTables {
    pub s_m: Vec<f64>,
    pub s_u: Vec<f64>,
}

impl PayoffTables {
    pub fn from_model(grid: &StrategyGrid, model: &SidePayoffModel) -> Result<Self, ZdError> {
        let mut s_m = Vec::with_capacity(grid.outcomes());
        let mut s_u = Vec::with_capacity(grid.outcomes());
        for a in 0..grid.n_miner() {
            for b in 0..grid.n_fee() {
                let x = grid.miner_value(a);
                let y = grid.fee_value(b);
                let sm =
                    model.miner_payoff(x, y).map_err(|e| ZdError::PayoffModel(e.to_string()))?;
                let su =
                    model.user_payoff(x, y).map_err(|e| ZdError::PayoffModel(e.to_string()))?;
                s_m.push(sm);
                s_u.push(su);
            }
        }
        Ok(PayoffTables { s_m, s_u })
    }
}

fn validate_rows(data: &[f64], rows: usize, cols: usize) -> Result<(), ZdError> {
    debug_assert_eq!(data.len(), rows * cols);
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() || !(-1e-15..=1.0 + 1e-12).contains(&v) {
                return Err(ZdError::EntryOutOfRange { row: r, col: c, value: v });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(ZdError::NotRowStochastic { row: r, sum });
        }
    }
    Ok(())
}

fn random_row<R: Rng>(cols: usize, rng: &mut R) -> Vec<f64> {
    // Exponential draws normalized to the simplex (uniform Dirichlet).
    let draws: Vec<f64> = (0..cols).map(|_| -rng.gen_range(1e-12..1.0f64).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

/// User-side conditional policy: one fee distribution per previous joint
/// outcome. Rows are indexed by [`StrategyGrid::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct UserPolicy {
    pub n_rows: usize,
    pub n_fees: usize,
    probs: Vec<f64>,
}

impl UserPolicy {
    pub fn new(grid: &StrategyGrid, probs: Vec<f64>) -> Result<Self, ZdError> {
        let (n_rows, n_fees) = (grid.outcomes(), grid.n_fee());
        if probs.len() != n_rows * n_fees {
            return Err(ZdError::DimensionMismatch { expected: n_rows * n_fees, got: probs.len() });
        }
        validate_rows(&probs, n_rows, n_fees)?;
        Ok(UserPolicy { n_rows, n_fees, probs })
    }

    pub fn uniform(grid: &StrategyGrid) -> Self {
        let (n_rows, n_fees) = (grid.outcomes(), grid.n_fee());
        UserPolicy { n_rows, n_fees, probs: vec![1.0 / n_fees as f64; n_rows * n_fees] }
    }

    /// Same fee level after every outcome.
    pub fn deterministic(grid: &StrategyGrid, fee_level: usize) -> Self {
        let (n_rows, n_fees) = (grid.outcomes(), grid.n_fee());
        let mut probs = vec![0.0; n_rows * n_fees];
        for r in 0..n_rows {
            probs[r * n_fees + fee_level] = 1.0;
        }
        UserPolicy { n_rows, n_fees, probs }
    }

    pub fn random<R: Rng>(grid: &StrategyGrid, rng: &mut R) -> Self {
        let (n_rows, n_fees) = (grid.outcomes(), grid.n_fee());
        let mut probs = Vec::with_capacity(n_rows * n_fees);
        for _ in 0..n_rows {
            probs.extend(random_row(n_fees, rng));
        }
        UserPolicy { n_rows, n_fees, probs }
    }

    pub fn row(&self, outcome_idx: usize) -> &[f64] {
        &self.probs[outcome_idx * self.n_fees..(outcome_idx + 1) * self.n_fees]
    }
}

/// Miner-side conditional policy: one start-up level distribution per
/// observed fee level.
#[derive(Debug, Clone, PartialEq)]
pub struct MinerPolicy {
    pub n_rows: usize,
    pub n_levels: usize,
    probs: Vec<f64>,
}

impl MinerPolicy {
    pub fn new(grid: &StrategyGrid, probs: Vec<f64>) -> Result<Self, ZdError> {
        let (n_rows, n_levels) = (grid.n_fee(), grid.n_miner());
        if probs.len() != n_rows * n_levels {
            return Err(ZdError::DimensionMismatch {
                expected: n_rows * n_levels,
                got: probs.len(),
            });
        }
        validate_rows(&probs, n_rows, n_levels)?;
        Ok(MinerPolicy { n_rows, n_levels, probs })
    }

    pub fn uniform(grid: &StrategyGrid) -> Self {
        let (n_rows, n_levels) = (grid.n_fee(), grid.n_miner());
        MinerPolicy { n_rows, n_levels, probs: vec![1.0 / n_levels as f64; n_rows * n_levels] }
    }

    /// Same start-up level after every fee.
    pub fn deterministic(grid: &StrategyGrid, level: usize) -> Self {
        let (n_rows, n_levels) = (grid.n_fee(), grid.n_miner());
        let mut probs = vec![0.0; n_rows * n_levels];
        for r in 0..n_rows {
            probs[r * n_levels + level] = 1.0;
        }
        MinerPolicy { n_rows, n_levels, probs }
    }

    pub fn random<R: Rng>(grid: &StrategyGrid, rng: &mut R) -> Self {
        let (n_rows, n_levels) = (grid.n_fee(), grid.n_miner());
        let mut probs = Vec::with_capacity(n_rows * n_levels);
        for _ in 0..n_rows {
            probs.extend(random_row(n_levels, rng));
        }
        MinerPolicy { n_rows, n_levels, probs }
    }

    pub fn row(&self, fee_level: usize) -> &[f64] {
        &self.probs[fee_level * self.n_levels..(fee_level + 1) * self.n_levels]
    }
}

/// Row-stochastic transition matrix over joint outcomes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, ZdError> {
        if data.len() != n * n {
            return Err(ZdError::DimensionMismatch { expected: n * n, got: data.len() });
        }
        validate_rows(&data, n, n)?;
        Ok(TransitionMatrix { n, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Chain over outcomes induced by a user policy and a miner policy:
/// `(a, b) -> (r, s)` with probability `q(s | a, b) * p(r | s)`.
pub fn build_transition_matrix(
    grid: &StrategyGrid,
    q: &UserPolicy,
    p: &MinerPolicy,
) -> Result<TransitionMatrix, ZdError> {
    let n = grid.outcomes();
    if q.n_rows != n || q.n_fees != grid.n_fee() {
        return Err(ZdError::DimensionMismatch { expected: n, got: q.n_rows });
    }
    if p.n_rows != grid.n_fee() || p.n_levels != grid.n_miner() {
        return Err(ZdError::DimensionMismatch { expected: grid.n_fee(), got: p.n_rows });
    }
    let mut data = vec![0.0; n * n];
    for a in 0..grid.n_miner() {
        for b in 0..grid.n_fee() {
            let from = grid.index(a, b);
            let q_row = q.row(from);
            for s in 0..grid.n_fee() {
                let qs = q_row[s];
                let p_row = p.row(s);
                for r in 0..grid.n_miner() {
                    data[from * n + grid.index(r, s)] = qs * p_row[r];
                }
            }
        }
    }
    TransitionMatrix::new(n, data)
}

/// Stationary distribution with solver metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub sigma: Vec<f64>,
    /// Power-iteration steps spent across both phases.
    pub iterations: usize,
    /// `max_j |(sigma G)_j - sigma_j|` against the undamped matrix.
    pub residual: f64,
    /// Uniform mix applied during the damped phase.
    pub damping: f64,
}

fn mul_left(sigma: &[f64], m: &TransitionMatrix, out: &mut [f64]) {
    out.fill(0.0);
    for (i, &si) in sigma.iter().enumerate() {
        if si == 0.0 {
            continue;
        }
        let row = m.row(i);
        for (o, &mij) in out.iter_mut().zip(row.iter()) {
            *o += si * mij;
        }
    }
}

fn raw_residual(sigma: &[f64], m: &TransitionMatrix, scratch: &mut [f64]) -> f64 {
    mul_left(sigma, m, scratch);
    sigma
        .iter()
        .zip(scratch.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Stationary distribution of a row-stochastic matrix by damped power
/// iteration, then polished against the undamped matrix.
///
/// The damped phase mixes `DAMPING` of the uniform distribution into every
/// step, which makes the fixed point unique even on reducible chains. The
/// polish phase iterates the raw matrix from the damped fixed point and
/// keeps the iterate with the smallest raw residual.
pub fn stationary_distribution(m: &TransitionMatrix) -> Result<StationarySolution, ZdError> {
    let n = m.n;
    let uniform = 1.0 / n as f64;
    let mut sigma = vec![uniform; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0usize;

    loop {
        mul_left(&sigma, m, &mut next);
        let mut diff = 0.0f64;
        let mut sum = 0.0f64;
        for v in next.iter_mut() {
            *v = (1.0 - DAMPING) * *v + DAMPING * uniform;
            sum += *v;
        }
        for v in next.iter_mut() {
            *v /= sum;
        }
        for (a, b) in sigma.iter().zip(next.iter()) {
            diff = diff.max((a - b).abs());
        }
        std::mem::swap(&mut sigma, &mut next);
        iterations += 1;
        if diff < POWER_TOL {
            break;
        }
        if iterations >= MAX_ITERS {
            return Err(ZdError::ConvergenceFailure { iterations, residual: diff });
        }
    }

    // Polish against the raw matrix; on periodic chains this may not
    // improve, so keep the best iterate seen.
    let mut scratch = vec![0.0; n];
    let mut best = sigma.clone();
    let mut best_res = raw_residual(&best, m, &mut scratch);
    const POLISH_ITERS: usize = 10_000;
    for _ in 0..POLISH_ITERS {
        if best_res < POWER_TOL * 0.1 {
            break;
        }
        mul_left(&sigma, m, &mut next);
        let sum: f64 = next.iter().sum();
        for v in next.iter_mut() {
            *v /= sum;
        }
        std::mem::swap(&mut sigma, &mut next);
        iterations += 1;
        let res = raw_residual(&sigma, m, &mut scratch);
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&sigma);
        }
    }

    Ok(StationarySolution { sigma: best, iterations, residual: best_res, damping: DAMPING })
}

/// Long-run expected payoffs `(E_m, E_u)` under a stationary distribution.
pub fn expected_payoffs(sigma: &[f64], tables: &PayoffTables) -> Result<(f64, f64), ZdError> {
    if sigma.len() != tables.s_m.len() {
        return Err(ZdError::DimensionMismatch { expected: tables.s_m.len(), got: sigma.len() });
    }
    let e_m = sigma.iter().zip(tables.s_m.iter()).map(|(s, v)| s * v).sum();
    let e_u = sigma.iter().zip(tables.s_u.iter()).map(|(s, v)| s * v).sum();
    Ok((e_m, e_u))
}

/// Interval of miner payoffs a zero-determinant user policy can enforce:
/// the miner payoffs at outcomes `(0, 0)` and `(miner_levels, fee_levels)`,
/// returned as `(low, high)`.
pub fn controllable_payoff_range(grid: &StrategyGrid, tables: &PayoffTables) -> (f64, f64) {
    let lo = tables.s_m[grid.index(0, 0)];
    let hi = tables.s_m[grid.index(grid.miner_levels, grid.fee_levels)];
    if lo <= hi {
        (lo, hi)
    } else {
        (hi, lo)
    }
}

/// Where a zero-determinant row puts the probability mass it does not
/// assign to the top fee level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualRule {
    /// All remaining mass on fee level 0 (default).
    AllOnZero,
    /// Remaining mass spread uniformly over fee levels below the top.
    Uniform,
}

/// Linear-relation coefficients enforced by a zero-determinant policy:
/// `alpha * E_m + beta * E_u + gamma = 0` on the stationary distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZdCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Enforced miner payoff `-gamma / alpha`.
    pub target: f64,
}

/// Synthesizes the user policy that pins the miner side's stationary
/// payoff at `target` regardless of the miner policy.
///
/// Writing `w_b = fee_value(b) / max_fee` for the normalized fee weight,
/// the stationarity identity `sum_b sigma-mass(fee b) * w_b =
/// sum_rows sigma(row) * expected next fee weight` forces
///
/// `expected fee weight of row (a, b) - w_b = alpha * (S_m(a, b) - target)`
///
/// to average to zero, which pins `E_m` at `target`. With the default
/// residual rule the expected fee weight of a row equals its top-fee
/// probability, so each row assigns `w_b + alpha * (S_m - target)` to the
/// top fee and the rest to fee 0. `alpha` takes the largest magnitude that
/// keeps every row entry inside `[0, 1]`; its sign is negative for any
/// monotone payoff table (rows with `b = 0` force `alpha <= 0` whenever
/// the target exceeds the range's low endpoint).
pub fn zd_user_policy(
    grid: &StrategyGrid,
    tables: &PayoffTables,
    target: f64,
    rule: ResidualRule,
) -> Result<(UserPolicy, ZdCoefficients), ZdError> {
    let (e_min, e_max) = controllable_payoff_range(grid, tables);
    let pad = 1e-12 * (1.0 + target.abs());
    if !(e_min - pad..=e_max + pad).contains(&target) || !target.is_finite() {
        return Err(ZdError::InfeasibleTarget { target, min: e_min, max: e_max });
    }

    let n_fee = grid.n_fee();
    let top = grid.fee_levels;
    // Mean fee weight of the residual distribution.
    let w_res = match rule {
        ResidualRule::AllOnZero => 0.0,
        ResidualRule::Uniform => {
            let sum: f64 = (0..top).map(|s| s as f64 / top as f64).sum();
            sum / top as f64
        }
    };

    // Intersect per-row feasibility intervals for alpha: each row needs
    // w_res <= w_b + alpha * (S_m - target) <= 1.
    const ALPHA_CAP: f64 = 1e6;
    let (mut lo, mut hi) = (-ALPHA_CAP, ALPHA_CAP);
    for a in 0..grid.n_miner() {
        for b in 0..n_fee {
            let w_b = b as f64 / top as f64;
            let u = tables.s_m[grid.index(a, b)] - target;
            let (c_lo, c_hi) = (w_res - w_b, 1.0 - w_b);
            let tiny = 1e-14 * (1.0 + target.abs());
            if u > tiny {
                lo = lo.max(c_lo / u);
                hi = hi.min(c_hi / u);
            } else if u < -tiny {
                lo = lo.max(c_hi / u);
                hi = hi.min(c_lo / u);
            } else if c_lo > 0.0 || c_hi < 0.0 {
                return Err(ZdError::ResidualRuleInfeasible);
            }
        }
    }
    if lo > hi {
        return Err(if w_res > 0.0 {
            ZdError::ResidualRuleInfeasible
        } else {
            ZdError::DegenerateTarget
        });
    }
    let alpha = if lo.abs() >= hi.abs() { lo } else { hi };
    if alpha.abs() <= 1e-12 {
        return Err(ZdError::DegenerateTarget);
    }
    let gamma = -alpha * target;

    let mut probs = vec![0.0; grid.outcomes() * n_fee];
    for a in 0..grid.n_miner() {
        for b in 0..n_fee {
            let w_b = b as f64 / top as f64;
            let u = tables.s_m[grid.index(a, b)] - target;
            let weight = w_b + alpha * u;
            let q_top = ((weight - w_res) / (1.0 - w_res)).clamp(0.0, 1.0);
            let row = &mut probs[grid.index(a, b) * n_fee..(grid.index(a, b) + 1) * n_fee];
            row[top] = q_top;
            match rule {
                ResidualRule::AllOnZero => row[0] += 1.0 - q_top,
                ResidualRule::Uniform => {
                    let share = (1.0 - q_top) / top as f64;
                    for s in 0..top {
                        row[s] += share;
                    }
                }
            }
        }
    }
    let policy = UserPolicy::new(grid, probs)?;
    Ok((policy, ZdCoefficients { alpha, beta: 0.0, gamma, target }))
}

/// Residual `|alpha * E_m + beta * E_u + gamma|` of the linear relation on
/// the stationary distribution of the chain induced by `(q, p)`.
pub fn verify_linear_relation(
    grid: &StrategyGrid,
    tables: &PayoffTables,
    q: &UserPolicy,
    p: &MinerPolicy,
    coeffs: &ZdCoefficients,
) -> Result<f64, ZdError> {
    let matrix = build_transition_matrix(grid, q, p)?;
    let solution = stationary_distribution(&matrix)?;
    let (e_m, e_u) = expected_payoffs(&solution.sigma, tables)?;
    Ok((coeffs.alpha * e_m + coeffs.beta * e_u + coeffs.gamma).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::EconomicParams;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_setup() -> (StrategyGrid, PayoffTables) {
        let grid = StrategyGrid::new(10, 10, 10.0).unwrap();
        let model = SidePayoffModel::linear(EconomicParams::default()).unwrap();
        let tables = PayoffTables::from_model(&grid, &model).unwrap();
        (grid, tables)
    }

    fn matrix_from_rows(rows: &[&[f64]]) -> TransitionMatrix {
        let n = rows.len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        TransitionMatrix::new(n, data).unwrap()
    }

    #[test]
    fn grid_steps_are_exact() {
        let grid = StrategyGrid::new(10, 10, 10.0).unwrap();
        assert_eq!(grid.miner_levels as f64 * grid.miner_step(), 1.0);
        assert_eq!(grid.fee_levels as f64 * grid.fee_step(), 10.0);
        assert_eq!(grid.outcomes(), 121);
        assert_eq!(grid.index(10, 10), 120);
        assert_eq!(grid.outcome(grid.index(3, 7)), (3, 7));
    }

    /// Oracle: explicit four-nested-loop construction of the chain on a
    /// 2x2-level toy grid, compared entry by entry.
    #[test]
    fn transition_matrix_matches_hand_construction() {
        let grid = StrategyGrid::new(1, 1, 10.0).unwrap();
        let q = UserPolicy::new(
            &grid,
            vec![
                0.7, 0.3, // after (0,0)
                0.2, 0.8, // after (0,1)
                0.5, 0.5, // after (1,0)
                0.1, 0.9, // after (1,1)
            ],
        )
        .unwrap();
        let p = MinerPolicy::new(
            &grid,
            vec![
                0.6, 0.4, // response to fee 0
                0.25, 0.75, // response to fee 1
            ],
        )
        .unwrap();
        let m = build_transition_matrix(&grid, &q, &p).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for r in 0..2 {
                    for s in 0..2 {
                        let expect = q.row(grid.index(a, b))[s] * p.row(s)[r];
                        let got = m.row(grid.index(a, b))[grid.index(r, s)];
                        assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_policies_give_unit_mass_rows() {
        let grid = StrategyGrid::new(2, 2, 10.0).unwrap();
        let q = UserPolicy::deterministic(&grid, 2);
        let p = MinerPolicy::deterministic(&grid, 1);
        let m = build_transition_matrix(&grid, &q, &p).unwrap();
        let hit = grid.index(1, 2);
        for i in 0..grid.outcomes() {
            for j in 0..grid.outcomes() {
                let expect = if j == hit { 1.0 } else { 0.0 };
                assert_eq!(m.row(i)[j], expect);
            }
        }
    }

    #[test]
    fn transition_rows_are_stochastic() {
        let (grid, _) = reference_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = UserPolicy::random(&grid, &mut rng);
            let p = MinerPolicy::random(&grid, &mut rng);
            let m = build_transition_matrix(&grid, &q, &p).unwrap();
            for i in 0..m.n {
                let sum: f64 = m.row(i).iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
    }

    /// Hand-solved stationary distributions.
    #[test]
    fn stationary_matches_hand_solutions() {
        // Doubly stochastic: uniform.
        let m = matrix_from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let s = stationary_distribution(&m).unwrap();
        assert_abs_diff_eq!(s.sigma[0], 0.5, epsilon = 1e-10);

        // sigma_1 * 0.1 = sigma_2 * 0.5 => sigma = (5/6, 1/6).
        let m = matrix_from_rows(&[&[0.9, 0.1], &[0.5, 0.5]]);
        let s = stationary_distribution(&m).unwrap();
        assert_abs_diff_eq!(s.sigma[0], 5.0 / 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.sigma[1], 1.0 / 6.0, epsilon = 1e-10);
        assert!(s.residual < 1e-10);
        assert_eq!(s.damping, 1e-8);
    }

    #[test]
    fn stationary_on_identity_is_uniform() {
        let m = matrix_from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let s = stationary_distribution(&m).unwrap();
        for v in &s.sigma {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-10);
        }
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn stationary_rejects_non_stochastic() {
        let bad = TransitionMatrix::new(2, vec![0.5, 0.6, 0.5, 0.5]);
        assert!(matches!(bad, Err(ZdError::NotRowStochastic { row: 0, .. })));
        let bad = TransitionMatrix::new(2, vec![1.2, -0.2, 0.5, 0.5]);
        assert!(matches!(bad, Err(ZdError::EntryOutOfRange { .. })));
    }

    #[test]
    fn stationary_properties_on_random_chains() {
        let (grid, _) = reference_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let q = UserPolicy::random(&grid, &mut rng);
            let p = MinerPolicy::random(&grid, &mut rng);
            let m = build_transition_matrix(&grid, &q, &p).unwrap();
            let s = stationary_distribution(&m).unwrap();
            let sum: f64 = s.sigma.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(s.residual < 1e-10, "residual {}", s.residual);
            assert!(s.sigma.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn expected_payoffs_at_unit_masses() {
        let (grid, tables) = reference_setup();
        let mut sigma = vec![0.0; grid.outcomes()];
        sigma[grid.index(10, 10)] = 1.0;
        let (em, eu) = expected_payoffs(&sigma, &tables).unwrap();
        assert_abs_diff_eq!(em, 5.9, epsilon = 1e-12);
        assert_abs_diff_eq!(eu, -5.6, epsilon = 1e-12);

        let mut sigma = vec![0.0; grid.outcomes()];
        sigma[grid.index(0, 0)] = 1.0;
        let (em, eu) = expected_payoffs(&sigma, &tables).unwrap();
        assert_abs_diff_eq!(em, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(eu, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn expected_payoffs_uniform_average() {
        let (_grid, tables) = reference_setup();
        let sigma = vec![1.0 / 121.0; 121];
        let (em, eu) = expected_payoffs(&sigma, &tables).unwrap();
        // Mean over the lattice: 0.4 * (5 + 6.25) - 0.6 * 0.5 and 0.4 * 0.5 - 0.6 * 5.
        assert_abs_diff_eq!(em, 4.2, epsilon = 1e-12);
        assert_abs_diff_eq!(eu, -2.8, epsilon = 1e-12);
    }

    #[test]
    fn controllable_range_reference_values() {
        let (grid, tables) = reference_setup();
        let (lo, hi) = controllable_payoff_range(&grid, &tables);
        assert_abs_diff_eq!(lo, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 5.9, epsilon = 1e-12);
    }

    /// Oracle: sweep the two boundary-row entries of the closed-form
    /// enforced-payoff expression over a 101x101 grid; every reachable
    /// value must lie inside the returned interval.
    #[test]
    fn controllable_range_bounds_boundary_sweep() {
        let (grid, tables) = reference_setup();
        let (lo, hi) = controllable_payoff_range(&grid, &tables);
        let e00 = tables.s_m[grid.index(0, 0)];
        let etop = tables.s_m[grid.index(10, 10)];
        for i in 0..=100 {
            for j in 0..=100 {
                let q00 = i as f64 / 100.0;
                let qtt = j as f64 / 100.0;
                let denom = (1.0 - qtt) + q00;
                if denom < 1e-9 {
                    continue;
                }
                let e = ((1.0 - qtt) * e00 + q00 * etop) / denom;
                assert!(e >= lo - 1e-9 && e <= hi + 1e-9, "({q00},{qtt}) -> {e}");
            }
        }
    }

    #[test]
    fn controllable_range_degenerate_point() {
        // Cost scale chosen so both endpoints coincide:
        // 0.4 * subsidy = 0.4 * (subsidy + max_fee) - cost => cost = 4.
        let params = EconomicParams { miner_cost_scale: 4.0, ..EconomicParams::default() };
        let grid = StrategyGrid::new(10, 10, 10.0).unwrap();
        let model = SidePayoffModel::linear(params).unwrap();
        let tables = PayoffTables::from_model(&grid, &model).unwrap();
        let (lo, hi) = controllable_payoff_range(&grid, &tables);
        assert_abs_diff_eq!(lo, hi, epsilon = 1e-12);
    }

    #[test]
    fn zd_policy_pins_midpoint_target() {
        let (grid, tables) = reference_setup();
        let (q, coeffs) = zd_user_policy(&grid, &tables, 4.2, ResidualRule::AllOnZero).unwrap();
        assert!(coeffs.alpha < 0.0);
        assert_eq!(coeffs.beta, 0.0);
        assert_abs_diff_eq!(coeffs.gamma / coeffs.alpha, -4.2, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let p = MinerPolicy::random(&grid, &mut rng);
            let res = verify_linear_relation(&grid, &tables, &q, &p, &coeffs).unwrap();
            assert!(res < 1e-9, "residual {res}");
        }
    }

    #[test]
    fn zd_policy_boundary_target_reaches_max() {
        let (grid, tables) = reference_setup();
        let (q, coeffs) = zd_user_policy(&grid, &tables, 5.9, ResidualRule::AllOnZero).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let p = MinerPolicy::random(&grid, &mut rng);
            let m = build_transition_matrix(&grid, &q, &p).unwrap();
            let s = stationary_distribution(&m).unwrap();
            let (em, _) = expected_payoffs(&s.sigma, &tables).unwrap();
            assert_abs_diff_eq!(em, 5.9, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(-coeffs.gamma / coeffs.alpha, 5.9, epsilon = 1e-12);
    }

    #[test]
    fn zd_policy_rejects_out_of_range_target() {
        let (grid, tables) = reference_setup();
        let err = zd_user_policy(&grid, &tables, 7.0, ResidualRule::AllOnZero).unwrap_err();
        match err {
            ZdError::InfeasibleTarget { target, min, max } => {
                assert_eq!(target, 7.0);
                assert_abs_diff_eq!(min, 2.5, epsilon = 1e-12);
                assert_abs_diff_eq!(max, 5.9, epsilon = 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(zd_user_policy(&grid, &tables, 2.0, ResidualRule::AllOnZero).is_err());
    }

    #[test]
    fn zd_rows_are_valid_across_targets() {
        let (grid, tables) = reference_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let t = 2.5 + rng.gen_range(0.0..1.0) * 3.4;
            let (q, coeffs) = zd_user_policy(&grid, &tables, t, ResidualRule::AllOnZero).unwrap();
            assert!(coeffs.alpha.abs() > 1e-12);
            for i in 0..q.n_rows {
                let sum: f64 = q.row(i).iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
    }

    /// Regression: a non-ZD policy pair with coefficients from a
    /// mismatched target leaves a visible residual. Uniform q against
    /// uniform p has stationary E_m = 4.2; with alpha = -2/7 from target
    /// 3.0 the residual is 1.2 * 2/7 = 12/35.
    #[test]
    fn mismatched_policy_leaves_residual() {
        let (grid, tables) = reference_setup();
        let (_, coeffs) = zd_user_policy(&grid, &tables, 3.0, ResidualRule::AllOnZero).unwrap();
        assert_abs_diff_eq!(coeffs.alpha, -2.0 / 7.0, epsilon = 1e-12);
        let q = UserPolicy::uniform(&grid);
        let p = MinerPolicy::uniform(&grid);
        let res = verify_linear_relation(&grid, &tables, &q, &p, &coeffs).unwrap();
        assert!(res > 0.01, "residual {res}");
        assert_abs_diff_eq!(res, 12.0 / 35.0, epsilon = 1e-9);
    }

    #[test]
    fn zd_policy_holds_against_always_late_miner() {
        let (grid, tables) = reference_setup();
        let (q, coeffs) = zd_user_policy(&grid, &tables, 3.7, ResidualRule::AllOnZero).unwrap();
        let p = MinerPolicy::deterministic(&grid, 0);
        let res = verify_linear_relation(&grid, &tables, &q, &p, &coeffs).unwrap();
        assert!(res < 1e-9, "residual {res}");
    }

    #[test]
    fn uniform_residual_rule_keeps_identity_when_feasible() {
        let (grid, tables) = reference_setup();
        let (q, coeffs) = zd_user_policy(&grid, &tables, 5.0, ResidualRule::Uniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..30 {
            let p = MinerPolicy::random(&grid, &mut rng);
            let res = verify_linear_relation(&grid, &tables, &q, &p, &coeffs).unwrap();
            assert!(res < 1e-9, "residual {res}");
        }
    }

    #[test]
    fn uniform_residual_rule_reports_narrowed_feasibility() {
        // Spreading residual mass over the lower fee levels forces every
        // row's expected fee weight up to at least the residual mean,
        // which rows with low fees and payoffs near the target cannot
        // reach; on the reference table targets below 4.3 are lost.
        let (grid, tables) = reference_setup();
        let err = zd_user_policy(&grid, &tables, 4.2, ResidualRule::Uniform).unwrap_err();
        assert_eq!(err, ZdError::ResidualRuleInfeasible);
    }
}
