//! Flat key-value experiment configuration.
//!
//! The document format is deliberately minimal so experiment definitions
//! stay diffable: one `key = value` pair per line, dotted keys grouping
//! related settings, `#` starting a comment line. Every key is required,
//! unknown and duplicate keys are rejected by name, and the schema
//! version is pinned so stale documents fail loudly instead of silently
//! drifting.

use anyhow::{anyhow, bail, Result};
use gapsim_core::incircle::MiningSystemModel;
use gapsim_core::payoff::EconomicParams;
use gapsim_core::sim::{PlayMode, SimConfig, UserAgent};
use gapsim_core::zdengine::ResidualRule;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Version of the document layout this build reads and writes.
pub const SCHEMA_VERSION: u64 = 1;

/// Everything a run needs: the repeated-game setup, the continuous
/// round-race model for the complementarity and gap commands, and where
/// exports land.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub race: MiningSystemModel,
    /// Time-grid resolution for the complementarity report.
    pub grid_resolution: usize,
    /// Sample count for the income-versus-cost profile.
    pub time_resolution: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            race: MiningSystemModel::default(),
            grid_resolution: 8,
            time_resolution: 200,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Raw `key = value` entries of one document.
struct Doc {
    entries: BTreeMap<String, String>,
}

impl Doc {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected 'key = value', got '{line}'", idx + 1);
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                bail!("line {}: empty key", idx + 1);
            }
            let value = value.trim().to_string();
            if entries.insert(key.clone(), value).is_some() {
                bail!("duplicate configuration key '{key}'");
            }
        }
        Ok(Doc { entries })
    }

    fn take(&mut self, key: &str) -> Result<String> {
        self.entries
            .remove(key)
            .ok_or_else(|| anyhow!("missing required configuration key '{key}'"))
    }

    fn take_parsed<T>(&mut self, key: &str, expect: &str) -> Result<T>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        let value = self.take(key)?;
        value
            .parse()
            .map_err(|e| anyhow!("key '{key}': cannot parse '{value}' as {expect}: {e}"))
    }

    fn take_usize(&mut self, key: &str) -> Result<usize> {
        self.take_parsed(key, "an unsigned integer")
    }

    fn take_u64(&mut self, key: &str) -> Result<u64> {
        self.take_parsed(key, "an unsigned integer")
    }

    fn take_f64(&mut self, key: &str) -> Result<f64> {
        self.take_parsed(key, "a number")
    }

    /// Comma-separated numbers; an empty value is an empty list.
    fn take_f64_list(&mut self, key: &str) -> Result<Vec<f64>> {
        let value = self.take(key)?;
        if value.is_empty() {
            return Ok(Vec::new());
        }
        value
            .split(',')
            .map(|item| {
                let item = item.trim();
                item.parse().map_err(|e| {
                    anyhow!("key '{key}': cannot parse list entry '{item}' as a number: {e}")
                })
            })
            .collect()
    }

    /// Errors on the first leftover (unknown) key.
    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            bail!("unknown configuration key '{key}'");
        }
        Ok(())
    }
}

fn residual_rule_name(rule: ResidualRule) -> &'static str {
    match rule {
        ResidualRule::AllOnZero => "all_on_zero",
        ResidualRule::Uniform => "uniform",
    }
}

fn parse_residual_rule(key: &str, value: &str) -> Result<ResidualRule> {
    match value {
        "all_on_zero" => Ok(ResidualRule::AllOnZero),
        "uniform" => Ok(ResidualRule::Uniform),
        other => bail!("key '{key}': unknown residual rule '{other}' (expected all_on_zero or uniform)"),
    }
}

fn freq_window_name(window: Option<usize>) -> String {
    match window {
        None => "none".to_string(),
        Some(n) => n.to_string(),
    }
}

fn parse_freq_window(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        return Ok(None);
    }
    value
        .parse()
        .map(Some)
        .map_err(|e| anyhow!("key '{key}': expected 'none' or a window length: {e}"))
}

fn join_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses a complete document; every schema key must be present.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut doc = Doc::parse(text)?;

        let version = doc.take_u64("schema_version")?;
        if version != SCHEMA_VERSION {
            bail!("unsupported schema_version {version} (this build reads version {SCHEMA_VERSION})");
        }

        let prelim_rounds = doc.take_usize("sim.prelim_rounds")?;
        let main_rounds = doc.take_usize("sim.main_rounds")?;
        let repeats = doc.take_usize("sim.repeats")?;
        let seed = doc.take_u64("sim.seed")?;
        let miner_levels = doc.take_usize("sim.miner_levels")?;
        let fee_levels = doc.take_usize("sim.fee_levels")?;
        let user: UserAgent = {
            let value = doc.take("sim.user")?;
            value.parse().map_err(|e| anyhow!("key 'sim.user': {e}"))?
        };
        let p0 = doc.take_f64("sim.p0")?;
        let q0 = doc.take_f64("sim.q0")?;
        let play_mode: PlayMode = {
            let value = doc.take("sim.play_mode")?;
            value.parse().map_err(|e| anyhow!("key 'sim.play_mode': {e}"))?
        };
        let residual_rule = {
            let value = doc.take("sim.residual_rule")?;
            parse_residual_rule("sim.residual_rule", &value)?
        };
        let freq_window = {
            let value = doc.take("sim.freq_window")?;
            parse_freq_window("sim.freq_window", &value)?
        };
        let omega_reward = doc.take_f64("sim.omega_reward")?;
        let omega_penalty = doc.take_f64("sim.omega_penalty")?;

        let model = doc.take("payoff.model")?;
        if model != "linear" {
            bail!("key 'payoff.model': unsupported payoff model '{model}' (expected linear)");
        }
        let params = EconomicParams {
            miner_gain_scale: doc.take_f64("payoff.miner_gain_scale")?,
            miner_cost_scale: doc.take_f64("payoff.miner_cost_scale")?,
            user_gain_scale: doc.take_f64("payoff.user_gain_scale")?,
            user_cost_scale: doc.take_f64("payoff.user_cost_scale")?,
            max_fee: doc.take_f64("payoff.max_fee")?,
            subsidy: doc.take_f64("payoff.subsidy")?,
            round_duration: doc.take_f64("payoff.round_duration")?,
        };

        let race = MiningSystemModel {
            lambda: doc.take_f64("race.lambda")?,
            round_duration: doc.take_f64("race.round_duration")?,
            miner_strategies: doc.take_f64_list("race.miner_strategies")?,
            user_fees: doc.take_f64_list("race.user_fees")?,
            cost_rate: doc.take_f64("race.cost_rate")?,
            subsidy: doc.take_f64("race.subsidy")?,
            eps_m: doc.take_f64("race.eps_m")?,
            sig_m: doc.take_f64("race.sig_m")?,
            eps_u: doc.take_f64("race.eps_u")?,
            sig_u: doc.take_f64("race.sig_u")?,
            user_value: doc.take_f64("race.user_value")?,
            fee_cost_slope: doc.take_f64("race.fee_cost_slope")?,
        };
        let grid_resolution = doc.take_usize("race.grid_resolution")?;
        let time_resolution = doc.take_usize("race.time_resolution")?;

        let output_dir = PathBuf::from(doc.take("output.dir")?);

        doc.finish()?;

        let sim = SimConfig {
            prelim_rounds,
            main_rounds,
            repeats,
            seed,
            miner_levels,
            fee_levels,
            params,
            user,
            p0,
            q0,
            play_mode,
            residual_rule,
            freq_window,
            omega_reward,
            omega_penalty,
        };
        Ok(ExperimentConfig { sim, race, grid_resolution, time_resolution, output_dir })
    }

    /// Renders the full document; `parse_str` reads it back identically.
    pub fn emit(&self) -> String {
        let s = &self.sim;
        let p = &s.params;
        let r = &self.race;
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "# Experiment definition: one 'key = value' per line, '#' comments,").unwrap();
        writeln!(w, "# every key required. Values shown are the build's defaults.").unwrap();
        writeln!(w, "schema_version = {SCHEMA_VERSION}").unwrap();
        writeln!(w).unwrap();
        writeln!(w, "# Repeated game: estimation rounds, mechanism rounds, repeats, RNG seed.").unwrap();
        writeln!(w, "sim.prelim_rounds = {}", s.prelim_rounds).unwrap();
        writeln!(w, "sim.main_rounds = {}", s.main_rounds).unwrap();
        writeln!(w, "sim.repeats = {}", s.repeats).unwrap();
        writeln!(w, "sim.seed = {}", s.seed).unwrap();
        writeln!(w, "# Strategy discretization: levels above zero per side.").unwrap();
        writeln!(w, "sim.miner_levels = {}", s.miner_levels).unwrap();
        writeln!(w, "sim.fee_levels = {}", s.fee_levels).unwrap();
        writeln!(w, "# User side: mechanism, all_c, all_d, wsls, tft, or random.").unwrap();
        writeln!(w, "sim.user = {}", s.user.name()).unwrap();
        writeln!(w, "# Opening mixed-strategy weights (miner earliest level, user top fee).").unwrap();
        writeln!(w, "sim.p0 = {}", s.p0).unwrap();
        writeln!(w, "sim.q0 = {}", s.q0).unwrap();
        writeln!(w, "# Evolutionary update feed: analytic or sampled.").unwrap();
        writeln!(w, "sim.play_mode = {}", s.play_mode.name()).unwrap();
        writeln!(w, "# Residual fee mass placement: all_on_zero or uniform.").unwrap();
        writeln!(w, "sim.residual_rule = {}", residual_rule_name(s.residual_rule)).unwrap();
        writeln!(w, "# Frequency memory: none (cumulative) or a window length.").unwrap();
        writeln!(w, "sim.freq_window = {}", freq_window_name(s.freq_window)).unwrap();
        writeln!(w, "# Reward/penalty curve steepness.").unwrap();
        writeln!(w, "sim.omega_reward = {}", s.omega_reward).unwrap();
        writeln!(w, "sim.omega_penalty = {}", s.omega_penalty).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "# Stage payoffs (linear is the only supported model).").unwrap();
        writeln!(w, "payoff.model = linear").unwrap();
        writeln!(w, "payoff.miner_gain_scale = {}", p.miner_gain_scale).unwrap();
        writeln!(w, "payoff.miner_cost_scale = {}", p.miner_cost_scale).unwrap();
        writeln!(w, "payoff.user_gain_scale = {}", p.user_gain_scale).unwrap();
        writeln!(w, "payoff.user_cost_scale = {}", p.user_cost_scale).unwrap();
        writeln!(w, "payoff.max_fee = {}", p.max_fee).unwrap();
        writeln!(w, "payoff.subsidy = {}", p.subsidy).unwrap();
        writeln!(w, "payoff.round_duration = {}", p.round_duration).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "# Continuous round race (complementarity and gap-profile commands).").unwrap();
        writeln!(w, "race.lambda = {}", r.lambda).unwrap();
        writeln!(w, "race.round_duration = {}", r.round_duration).unwrap();
        writeln!(w, "race.miner_strategies = {}", join_list(&r.miner_strategies)).unwrap();
        writeln!(w, "race.user_fees = {}", join_list(&r.user_fees)).unwrap();
        writeln!(w, "race.cost_rate = {}", r.cost_rate).unwrap();
        writeln!(w, "race.subsidy = {}", r.subsidy).unwrap();
        writeln!(w, "race.eps_m = {}", r.eps_m).unwrap();
        writeln!(w, "race.sig_m = {}", r.sig_m).unwrap();
        writeln!(w, "race.eps_u = {}", r.eps_u).unwrap();
        writeln!(w, "race.sig_u = {}", r.sig_u).unwrap();
        writeln!(w, "race.user_value = {}", r.user_value).unwrap();
        writeln!(w, "race.fee_cost_slope = {}", r.fee_cost_slope).unwrap();
        writeln!(w, "race.grid_resolution = {}", self.grid_resolution).unwrap();
        writeln!(w, "race.time_resolution = {}", self.time_resolution).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "# Where CSV exports land (overridable with --out).").unwrap();
        writeln!(w, "output.dir = {}", self.output_dir.display()).unwrap();
        out
    }
}
