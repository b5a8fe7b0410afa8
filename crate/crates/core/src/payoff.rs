//! Single-round payoff models on normalized strategy spaces.
//!
//! The miner side chooses a start-up level `x` in `[0, 1]` (1 = starts
//! mining at the beginning of the round) and the user side bids a fee `y`
//! in `[0, max_fee]`. Each side's payoff is a scaled gain term minus a
//! scaled cost term, both built from monotone scalar function families.

use thiserror::Error;

/// Errors produced by payoff evaluation and equilibrium analysis.
#[derive(Debug, Error, PartialEq)]
pub enum PayoffError {
    #[error("miner level {0} outside [0, 1]")]
    MinerLevelOutOfDomain(f64),
    #[error("fee {0} outside [0, {1}]")]
    FeeOutOfDomain(f64, f64),
    #[error("{0} must be positive")]
    NonPositiveParam(&'static str),
    #[error("{0} cost function is not strictly increasing on its domain")]
    NonIncreasingCost(&'static str),
}

/// A monotone scalar function from a named family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFn {
    /// `slope * u`
    Linear { slope: f64 },
    /// `slope * u + intercept`
    Affine { slope: f64, intercept: f64 },
    /// `u ^ exponent`, defined for `u >= 0`
    Power { exponent: f64 },
}

impl ScalarFn {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            ScalarFn::Linear { slope } => slope * u,
            ScalarFn::Affine { slope, intercept } => slope * u + intercept,
            ScalarFn::Power { exponent } => u.powf(exponent),
        }
    }

    /// Sampled strict-monotonicity check on `[lo, hi]`.
    pub fn is_strictly_increasing_on(&self, lo: f64, hi: f64) -> bool {
        const SAMPLES: usize = 64;
        let mut prev = self.eval(lo);
        for i in 1..=SAMPLES {
            let u = lo + (hi - lo) * i as f64 / SAMPLES as f64;
            let v = self.eval(u);
            if v <= prev {
                return false;
            }
            prev = v;
        }
        true
    }
}

/// Scale factors and domain bounds shared across the game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EconomicParams {
    /// Weight on the miner side's gain term.
    pub miner_gain_scale: f64,
    /// Weight on the miner side's cost term.
    pub miner_cost_scale: f64,
    /// Weight on the user side's gain term.
    pub user_gain_scale: f64,
    /// Weight on the user side's cost term.
    pub user_cost_scale: f64,
    /// Highest biddable fee.
    pub max_fee: f64,
    /// Fixed block reward added to the miner side's revenue.
    pub subsidy: f64,
    /// Duration of one round; start-up time is `(1 - x) * round_duration`.
    pub round_duration: f64,
}

impl Default for EconomicParams {
    fn default() -> Self {
        EconomicParams {
            miner_gain_scale: 0.4,
            miner_cost_scale: 0.6,
            user_gain_scale: 0.4,
            user_cost_scale: 0.6,
            max_fee: 10.0,
            subsidy: 6.25,
            round_duration: 10.0,
        }
    }
}

impl EconomicParams {
    pub fn validate(&self) -> Result<(), PayoffError> {
        if !(self.max_fee > 0.0) {
            return Err(PayoffError::NonPositiveParam("max_fee"));
        }
        if !(self.round_duration > 0.0) {
            return Err(PayoffError::NonPositiveParam("round_duration"));
        }
        Ok(())
    }
}

/// Payoffs for both sides of the stage game.
///
/// `miner_payoff(x, y) = miner_gain_scale * miner_gain(y) - miner_cost_scale * miner_cost(x)`
/// `user_payoff(x, y)  = user_gain_scale * user_gain(x) - user_cost_scale * user_cost(y)`
#[derive(Debug, Clone, PartialEq)]
pub struct SidePayoffModel {
    pub params: EconomicParams,
    /// Miner revenue as a function of the fee `y`.
    pub miner_gain: ScalarFn,
    /// Miner expense as a function of its level `x`.
    pub miner_cost: ScalarFn,
    /// User benefit as a function of the miner level `x`.
    pub user_gain: ScalarFn,
    /// User expense as a function of its fee `y`.
    pub user_cost: ScalarFn,
}

impl SidePayoffModel {
    pub fn new(
        params: EconomicParams,
        miner_gain: ScalarFn,
        miner_cost: ScalarFn,
        user_gain: ScalarFn,
        user_cost: ScalarFn,
    ) -> Result<Self, PayoffError> {
        params.validate()?;
        Ok(SidePayoffModel { params, miner_gain, miner_cost, user_gain, user_cost })
    }

    /// Linear instantiation: identity gains and costs, with the miner's
    /// revenue shifted by the block subsidy.
    pub fn linear(params: EconomicParams) -> Result<Self, PayoffError> {
        let subsidy = params.subsidy;
        SidePayoffModel::new(
            params,
            ScalarFn::Affine { slope: 1.0, intercept: subsidy },
            ScalarFn::Linear { slope: 1.0 },
            ScalarFn::Linear { slope: 1.0 },
            ScalarFn::Linear { slope: 1.0 },
        )
    }

    fn check_domain(&self, x: f64, y: f64) -> Result<(), PayoffError> {
        if !(0.0..=1.0).contains(&x) || !x.is_finite() {
            return Err(PayoffError::MinerLevelOutOfDomain(x));
        }
        if !(0.0..=self.params.max_fee).contains(&y) || !y.is_finite() {
            return Err(PayoffError::FeeOutOfDomain(y, self.params.max_fee));
        }
        Ok(())
    }

    /// Miner-side stage payoff at levels `(x, y)`.
    pub fn miner_payoff(&self, x: f64, y: f64) -> Result<f64, PayoffError> {
        self.check_domain(x, y)?;
        Ok(self.params.miner_gain_scale * self.miner_gain.eval(y)
            - self.params.miner_cost_scale * self.miner_cost.eval(x))
    }

    /// User-side stage payoff at levels `(x, y)`.
    pub fn user_payoff(&self, x: f64, y: f64) -> Result<f64, PayoffError> {
        self.check_domain(x, y)?;
        Ok(self.params.user_gain_scale * self.user_gain.eval(x)
            - self.params.user_cost_scale * self.user_cost.eval(y))
    }

    /// Mutual-defection equilibrium of the one-shot game.
    ///
    /// When both cost functions are strictly increasing, each side's payoff
    /// strictly decreases in its own action, so `(0, 0)` is the unique
    /// equilibrium of the stage game.
    pub fn stage_equilibrium(&self) -> Result<(f64, f64), PayoffError> {
        if !self.miner_cost.is_strictly_increasing_on(0.0, 1.0) {
            return Err(PayoffError::NonIncreasingCost("miner"));
        }
        if !self.user_cost.is_strictly_increasing_on(0.0, self.params.max_fee) {
            return Err(PayoffError::NonIncreasingCost("user"));
        }
        Ok((0.0, 0.0))
    }
}
