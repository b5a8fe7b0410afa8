//! Core library for the fee-incentive mining game.
//!
//! The library models a repeated sequential game between an aggregated
//! user side (bidding transaction fees) and an aggregated miner side
//! (choosing how early to start mining in a round). It provides:
//!
//! - [`payoff`]: single-round payoff models on normalized strategy spaces;
//! - [`incircle`]: the continuous intra-round mining competition (block-time
//!   density, expected payoffs, supermodularity checks, gap profiles);
//! - [`zdengine`]: the discretized Markov game and zero-determinant policy
//!   synthesis that pins the miner side's long-run payoff;
//! - [`mechanism`]: the adaptive reward/penalty target schedule;
//! - [`agents`]: the evolutionary miner and baseline user strategies;
//! - [`sim`]: round-based episode orchestration with reproducible traces.

pub mod agents;
pub mod incircle;
pub mod mechanism;
pub mod payoff;
pub mod sim;
pub mod zdengine;

pub use agents::{BaselineKind, BaselineUser, EvolutionaryMinerState, FreqMode};
pub use incircle::{GapSample, MiningSystemModel, SupermodularReport};
pub use mechanism::{Branch, MechanismState, TransitionEstimate};
pub use payoff::{EconomicParams, PayoffError, ScalarFn, SidePayoffModel};
pub use sim::{PlayMode, RoundRecord, SimConfig, SimTrace, UserAgent};
pub use zdengine::{
    MinerPolicy, PayoffTables, ResidualRule, StationarySolution, StrategyGrid, UserPolicy,
    ZdCoefficients,
};
