//! Post-hoc evaluation metrics: the steps-to-completion (S2C) stability
//! measure, operation and blackout costs, and the score anchored to the
//! do-nothing baseline.
//!
//! Costs split an episode at its terminal step `t_end`: every survived
//! step is billed for its transport losses at the going energy price,
//! and every remaining step of the chronic is billed the full scheduled
//! load, marked up by the blackout penalty `beta`. The score maps the
//! do-nothing cost to 0 and an 80% saving to 100, linearly and without
//! clamping on either side.

use crate::chronics::{Chronic, Scenario, DAY_STEPS};
use crate::env::EnvConfig;
use crate::episode::{run_episode, EpisodeAgent, EpisodeTrace};
use crate::grid::Grid;
use crate::ppo::EvalPoint;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

// ====================================================================
// Configuration
// ====================================================================

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Blackout penalty multiplier; must exceed 1.
    pub beta: f64,
    /// Hours per step, converting MW to MWh.
    pub dt_hours: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            beta: 2.0,
            dt_hours: 1.0 / 12.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta > 1.0) {
            return Err(format!("beta {} must exceed 1", self.beta));
        }
        if !(self.dt_hours > 0.0) {
            return Err(format!("dt_hours {} must be positive", self.dt_hours));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace covers chronic steps {start}..{end} but the chronic has {chronic_len}")]
    LengthMismatch {
        start: usize,
        end: usize,
        chronic_len: usize,
    },
    #[error("do-nothing baseline cost {0} is not positive; the score is undefined")]
    NonpositiveBaseline(f64),
}

// ====================================================================
// Steps to completion
// ====================================================================

/// Evaluation episode lengths per chronic over the course of training,
/// as consumed by the S2C metric.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalHistory {
    evals: BTreeMap<usize, Vec<(usize, usize)>>,
    chronic_len: BTreeMap<usize, usize>,
    total_train_steps: usize,
}

impl EvalHistory {
    pub fn new(total_train_steps: usize) -> Self {
        EvalHistory {
            evals: BTreeMap::new(),
            chronic_len: BTreeMap::new(),
            total_train_steps,
        }
    }

    /// Record one evaluation episode: after `step` training steps the
    /// agent survived `tau` steps of chronic `chronic`. Steps must
    /// arrive in strictly increasing order per chronic.
    pub fn record(&mut self, chronic: usize, chronic_len: usize, step: usize, tau: usize) {
        assert!(tau <= chronic_len, "tau {tau} exceeds the chronic length {chronic_len}");
        let known = *self.chronic_len.entry(chronic).or_insert(chronic_len);
        assert_eq!(known, chronic_len, "conflicting lengths for chronic {chronic}");
        let seq = self.evals.entry(chronic).or_default();
        if let Some(&(last, _)) = seq.last() {
            assert!(step > last, "evaluation steps must be strictly increasing");
        }
        seq.push((step, tau));
    }

    /// Collect one opponent mode out of training evaluation points.
    pub fn from_eval_points(
        points: &[EvalPoint],
        opponent: bool,
        chronics: &[Chronic],
        total_train_steps: usize,
    ) -> Self {
        let mut history = EvalHistory::new(total_train_steps);
        for point in points {
            for ep in point.episodes.iter().filter(|e| e.opponent == opponent) {
                history.record(
                    ep.chronic,
                    chronics[ep.chronic].len(),
                    point.step,
                    ep.episode_len,
                );
            }
        }
        history
    }

    pub fn chronics(&self) -> impl Iterator<Item = usize> + '_ {
        self.evals.keys().copied()
    }

    pub fn total_train_steps(&self) -> usize {
        self.total_train_steps
    }

    /// Smallest evaluated training step from which every evaluation of
    /// the chronic ran full length, or the total training budget if the
    /// agent never reached stable completion.
    pub fn s2c(&self, chronic: usize) -> usize {
        let evals = self
            .evals
            .get(&chronic)
            .expect("no evaluations recorded for the chronic");
        assert!(!evals.is_empty(), "no evaluations recorded for the chronic");
        let full = self.chronic_len[&chronic];
        let mut candidate = None;
        for &(step, tau) in evals.iter().rev() {
            if tau == full {
                candidate = Some(step);
            } else {
                break;
            }
        }
        candidate.unwrap_or(self.total_train_steps)
    }
}

// ====================================================================
// Costs and the score
// ====================================================================

/// Total episode cost in currency: losses priced per survived step plus
/// the blackout penalty on all scheduled load for the rest of the
/// chronic. The trace must span to the end of the chronic.
pub fn episode_cost(
    trace: &EpisodeTrace,
    chronic: &Chronic,
    cfg: &ScoreConfig,
) -> Result<f64, MetricsError> {
    let start = trace.offset_days * DAY_STEPS;
    let end = start + trace.horizon;
    if end != chronic.len() {
        return Err(MetricsError::LengthMismatch {
            start,
            end,
            chronic_len: chronic.len(),
        });
    }
    let mut cost = 0.0;
    for (i, step) in trace.steps.iter().take(trace.survived).enumerate() {
        cost += step.total_loss * chronic.price[start + i] * cfg.dt_hours;
    }
    for t in start + trace.survived..chronic.len() {
        let load: f64 = chronic.load_p.row(t).sum();
        cost += cfg.beta * load * chronic.price[t] * cfg.dt_hours;
    }
    Ok(cost)
}

/// Score relative to the do-nothing baseline: 0 at the baseline cost,
/// 100 at an 80% saving, linear and unclamped on both sides.
pub fn l2rpn_score(cost_agent: f64, cost_do_nothing: f64) -> Result<f64, MetricsError> {
    if !(cost_do_nothing > 0.0) {
        return Err(MetricsError::NonpositiveBaseline(cost_do_nothing));
    }
    Ok(100.0 * (cost_do_nothing - cost_agent) / (0.8 * cost_do_nothing))
}

/// Run the all-do-nothing agent over the whole chronic and price the
/// result. Deterministic for a given opponent seed.
pub fn do_nothing_baseline(
    grid: &Grid,
    chronic: &Chronic,
    env_cfg: EnvConfig,
    cfg: &ScoreConfig,
    opponent_seed: u64,
) -> Result<(EpisodeTrace, f64), MetricsError> {
    let scenario = Scenario {
        chronic: chronic.id,
        offset_days: 0,
        horizon: chronic.len(),
    };
    let trace = run_episode(
        grid,
        chronic,
        &scenario,
        env_cfg,
        opponent_seed,
        &EpisodeAgent::DoNothing,
    )
    .expect("a full-length scenario always fits its chronic");
    let cost = episode_cost(&trace, chronic, cfg)?;
    Ok((trace, cost))
}

// ====================================================================
// Report output
// ====================================================================

/// One row of the per-chronic results table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChronicReport {
    pub chronic: usize,
    pub s2c: usize,
    pub cost_do_nothing: f64,
    pub cost_agent: f64,
    pub score: f64,
}

pub fn write_report_csv<W: std::io::Write>(rows: &[ChronicReport], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean and sample standard deviation, for summaries over seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "cannot summarize zero values");
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Summary { n, mean, std }
}
