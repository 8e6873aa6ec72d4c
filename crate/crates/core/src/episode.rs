//! Whole-episode rollouts with step-by-step traces.
//!
//! Used for deterministic evaluation during training, for the do-nothing
//! baseline that anchors scores, and for replaying saved traces.

use crate::action::ActionClass;
use crate::chronics::{self, Chronic, Scenario, SliceError};
use crate::env::{Env, EnvConfig};
use crate::grid::Grid;
use crate::nn::dist::MaskedCategoricalSet;
use crate::nn::net::Policy;
use serde::{Deserialize, Serialize};

/// One environment step as recorded in a trace file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub choices: Vec<usize>,
    pub class: ActionClass,
    pub reward: f64,
    pub rho: Vec<f64>,
    pub total_loss: f64,
    pub slack_p: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// A finished episode: every step taken, plus summary fields.
///
/// `survived` counts the successful steps; a terminal failure step is
/// recorded in `steps` but not counted, so cost accounting can price the
/// remaining window as blackout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub chronic: usize,
    pub offset_days: usize,
    pub opponent: bool,
    pub horizon: usize,
    pub survived: usize,
    pub completed: bool,
    pub reward_sum: f64,
    pub steps: Vec<TraceStep>,
}

/// How actions are chosen while running an episode.
pub enum EpisodeAgent<'p> {
    /// The empty action every step.
    DoNothing,
    /// Deterministic masked argmax of the policy, lowest index on ties.
    Greedy(&'p Policy),
}

/// Run one full episode and return its trace. Deterministic for a given
/// agent, scenario, and opponent seed.
pub fn run_episode(
    grid: &Grid,
    chronic: &Chronic,
    scenario: &Scenario,
    cfg: EnvConfig,
    opponent_seed: u64,
    agent: &EpisodeAgent,
) -> Result<EpisodeTrace, SliceError> {
    let slice = chronics::slice(chronic, scenario)?;
    let opponent = cfg.opponent.enabled;
    let mut env = Env::new(grid, slice, cfg, opponent_seed);
    let layout = env.layout().clone();
    let do_nothing = layout.do_nothing();

    let mut steps: Vec<TraceStep> = Vec::new();
    let mut reward_sum = 0.0;
    while !env.done() {
        let choices = match agent {
            EpisodeAgent::DoNothing => do_nothing.clone(),
            EpisodeAgent::Greedy(policy) => {
                let obs = policy.observe(grid, env.state(), env.result());
                let batch = policy.collate(std::slice::from_ref(&obs));
                let (logits, _) = policy.forward_values(&batch);
                let row: Vec<f64> = logits.row(0).to_vec();
                let mask = env.mask();
                MaskedCategoricalSet::from_logits(&layout, &row, &mask).argmax()
            }
        };
        let out = env.step(&choices).expect("stepped a finished episode");
        reward_sum += out.reward;
        steps.push(TraceStep {
            step: steps.len(),
            choices,
            class: out.class,
            reward: out.reward,
            rho: out.result.rho.clone(),
            total_loss: out.result.total_loss,
            slack_p: out.result.slack_p,
            terminated: out.terminated,
            truncated: out.truncated,
        });
    }

    let survived = match steps.last() {
        Some(last) if last.terminated => steps.len() - 1,
        _ => steps.len(),
    };
    let horizon = env.horizon();
    Ok(EpisodeTrace {
        chronic: scenario.chronic,
        offset_days: scenario.offset_days,
        opponent,
        horizon,
        survived,
        completed: survived == horizon,
        reward_sum,
        steps,
    })
}
