//! CSV export of simulation traces, per-round aggregates, complementarity
//! reports, and gap profiles. All writers emit a header row and quote per
//! RFC 4180 (the `csv` crate's default behavior); floats use the shortest
//! representation that parses back to the same value.

use anyhow::{Context, Result};
use gapsim_core::incircle::{GapSample, SupermodularReport};
use gapsim_core::sim::{ExperimentResult, RoundAggregate};
use std::path::Path;

fn float(v: f64) -> String {
    v.to_string()
}

fn open(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

/// One row per (run, round) with everything observable about the round.
pub fn write_trace(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = open(path)?;
    w.write_record([
        "run",
        "round",
        "phase",
        "fee_level",
        "miner_level",
        "s_m",
        "s_u",
        "e_target",
        "branch",
        "p_e",
        "kappa",
        "start_time",
    ])?;
    for (run, trace) in result.traces.iter().enumerate() {
        for r in &trace.records {
            w.write_record([
                run.to_string(),
                r.round.to_string(),
                r.phase.to_string(),
                r.fee_level.to_string(),
                r.miner_level.to_string(),
                float(r.s_m),
                float(r.s_u),
                r.e_target.map(float).unwrap_or_default(),
                r.branch.map(|b| b.to_string()).unwrap_or_default(),
                float(r.p_earliest),
                r.kappa.map(float).unwrap_or_default(),
                float(r.start_time),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format cross-run statistics: one row per (round, metric).
pub fn write_aggregate(path: &Path, aggregate: &[RoundAggregate]) -> Result<()> {
    let mut w = open(path)?;
    w.write_record(["round", "metric", "mean", "std"])?;
    for agg in aggregate {
        let metrics = [
            ("p_e", agg.p_earliest),
            ("fee_value", agg.fee_value),
            ("start_time", agg.start_time),
            ("s_m", agg.s_m),
            ("s_u", agg.s_u),
        ];
        for (name, stat) in metrics {
            w.write_record([
                agg.round.to_string(),
                name.to_string(),
                float(stat.mean),
                float(stat.std),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format condition evidence: per-(miner, time) rows for the two
/// miner-side conditions, per-user rows for the fee-side condition, and a
/// closing row with the smallest cross-partial. `index` is the miner or
/// user the row concerns; `time` is blank for time-independent rows.
pub fn write_supermodular(path: &Path, report: &SupermodularReport) -> Result<()> {
    let mut w = open(path)?;
    w.write_record(["record", "index", "time", "value"])?;
    for (name, table) in [("condition_a", &report.condition_a), ("condition_b", &report.condition_b)]
    {
        for (i, row) in table.iter().enumerate() {
            for (j, &holds) in row.iter().enumerate() {
                w.write_record([
                    name.to_string(),
                    i.to_string(),
                    float(report.times[j]),
                    holds.to_string(),
                ])?;
            }
        }
    }
    for (k, &holds) in report.user_condition.iter().enumerate() {
        w.write_record(["user_condition".to_string(), k.to_string(), String::new(), holds.to_string()])?;
    }
    w.write_record([
        "min_mixed_partial".to_string(),
        String::new(),
        String::new(),
        float(report.min_mixed_partial),
    ])?;
    w.flush()?;
    Ok(())
}

/// One row per sampled time of the income-versus-cost comparison.
pub fn write_gap_profile(path: &Path, samples: &[GapSample]) -> Result<()> {
    let mut w = open(path)?;
    w.write_record(["t", "income", "cost", "in_gap"])?;
    for s in samples {
        w.write_record([float(s.t), float(s.income), float(s.cost), s.in_gap.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
