//! Masked proximal policy optimization.
//!
//! Rollouts are collected in lockstep across a set of single-threaded
//! environment workers sharing one policy snapshot, advantages come from
//! generalized advantage estimation truncated at episode boundaries, and
//! updates minimize the negated clipped-surrogate objective
//! `L_clip - c1 * L_vf + c2 * S`. The value target is the frozen
//! pre-update TD target `r + gamma * V_old(s')`, not the empirical
//! return. Deterministic evaluation episodes run at a fixed cadence on
//! every held-out chronic, with and without the opponent.

use crate::chronics::{self, sample_scenario, Chronic, Scenario};
use crate::env::{Env, EnvConfig};
use crate::episode::{run_episode, EpisodeAgent};
use crate::grid::Grid;
use crate::nn::dist::MaskedCategoricalSet;
use crate::nn::net::{EncoderKind, Forward, ObsBatch, Observation, Policy};
use crate::nn::params::Adam;
use crate::nn::tape::Var;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::ControlFlow;
use thiserror::Error;

// ====================================================================
// Configuration
// ====================================================================

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PPOConfig {
    /// Discount factor.
    pub gamma: f64,
    /// GAE smoothing factor.
    pub lambda: f64,
    /// Clip width of the surrogate ratio.
    pub clip_eps: f64,
    /// Weight of the value loss (c1).
    pub value_coef: f64,
    /// Weight of the entropy bonus (c2).
    pub entropy_coef: f64,
    pub learning_rate: f64,
    /// Optimization epochs per collected rollout.
    pub epochs: usize,
    pub minibatch: usize,
    /// Steps collected per worker between updates.
    pub rollout_len: usize,
    pub workers: usize,
    /// Environment step budget for the whole run.
    pub total_steps: usize,
    /// Evaluation cadence in environment steps.
    pub eval_every: usize,
    /// Normalize advantages to zero mean and unit variance per update
    /// batch.
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch: 64,
            rollout_len: 32,
            workers: 8,
            total_steps: 100_000,
            eval_every: 10_000,
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(format!("lambda {} outside (0, 1]", self.lambda));
        }
        if !(self.clip_eps > 0.0) {
            return Err(format!("clip_eps {} must be positive", self.clip_eps));
        }
        if self.entropy_coef < 0.0 {
            return Err(format!("entropy_coef {} negative", self.entropy_coef));
        }
        if self.workers == 0 || self.rollout_len == 0 || self.minibatch == 0 {
            return Err("workers, rollout_len, and minibatch must be nonzero".into());
        }
        Ok(())
    }
}

// ====================================================================
// Generalized advantage estimation
// ====================================================================

/// GAE over one worker's trajectory. `bootstrap` is the old value of the
/// state after the last transition; a `done` flag truncates both the TD
/// residual and the accumulation. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n, "values length mismatch");
    assert_eq!(dones.len(), n, "dones length mismatch");
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_value = if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * if dones[t] { 0.0 } else { acc };
        advantages[t] = acc;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

// ====================================================================
// Rollout storage
// ====================================================================

#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Observation,
    pub choices: Vec<usize>,
    /// The exact mask used when sampling.
    pub mask: Vec<bool>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// Worker-major rollout storage: worker `w`'s trajectory occupies
/// `transitions[w * rollout_len .. (w + 1) * rollout_len]`.
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Frozen value targets `r + gamma * V_old(s') * (1 - done)`.
    pub td_targets: Vec<f64>,
    pub workers: usize,
    pub rollout_len: usize,
}

// ====================================================================
// The PPO loss on the tape
// ====================================================================

/// One update minibatch, fully materialized.
pub struct LossInputs {
    pub batch: ObsBatch,
    /// Row-major `[b, n_elements]`: the absolute logit column of each
    /// chosen per-element action.
    pub choice_cols: Vec<usize>,
    /// Row-major `[b, layout.total()]` sampling-time masks.
    pub masks: Vec<bool>,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub td_targets: Vec<f64>,
}

pub struct LossVars {
    pub forward: Forward,
    pub l_clip: Var,
    pub l_vf: Var,
    pub entropy: Var,
    pub total: Var,
    /// `-total`; the scalar to backpropagate when maximizing `total`.
    pub objective_neg: Var,
}

impl LossVars {
    pub fn scalar(&self, v: Var) -> f64 {
        self.forward.tape.value(v)[(0, 0)]
    }
}

#[derive(Debug, Error)]
pub enum LossError {
    #[error("non-finite ratio in update batch: {0}")]
    NonFiniteRatio(String),
    #[error("non-finite loss: l_clip {l_clip}, l_vf {l_vf}, entropy {entropy}")]
    NonFiniteLoss {
        l_clip: f64,
        l_vf: f64,
        entropy: f64,
    },
}

fn column(vals: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((vals.len(), 1), vals.to_vec()).unwrap()
}

/// Build the full masked-PPO loss for one minibatch on a fresh tape.
/// Rejects the batch (with diagnostics) if any ratio or loss term is
/// non-finite instead of stepping into a divergent update.
pub fn ppo_loss(policy: &Policy, inputs: &LossInputs, cfg: &PPOConfig) -> Result<LossVars, LossError> {
    let mut fwd = policy.forward(&inputs.batch);
    let layout = policy.layout();
    let segments: Vec<(usize, usize)> = (0..layout.n_elements())
        .map(|e| (layout.offset(e), layout.dim(e)))
        .collect();

    let tape = &mut fwd.tape;
    let logp = tape.masked_log_softmax(fwd.logits, segments, inputs.masks.clone());
    let new_logp = tape.gather_sum_rows(logp, inputs.choice_cols.clone(), layout.n_elements());
    let old_logp = tape.leaf(column(&inputs.old_logp));
    let diff = tape.sub(new_logp, old_logp);
    let ratio = tape.exp(diff);

    for (i, r) in tape.value(ratio).iter().enumerate() {
        if !r.is_finite() {
            return Err(LossError::NonFiniteRatio(format!(
                "row {i}: ratio {r}, old log-prob {}",
                inputs.old_logp[i]
            )));
        }
    }

    let adv = tape.leaf(column(&inputs.advantages));
    let t1 = tape.mul(ratio, adv);
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let t2 = tape.mul(clipped, adv);
    let pessimistic = tape.min_pair(t1, t2);
    let l_clip = tape.mean_all(pessimistic);

    let target = tape.leaf(column(&inputs.td_targets));
    let verr = tape.sub(fwd.value, target);
    let vsq = tape.mul(verr, verr);
    let l_vf = tape.mean_all(vsq);

    // Masked entries contribute exactly zero: their probability is exp of
    // the sentinel, which underflows to 0.
    let probs = tape.exp(logp);
    let plogp = tape.mul(probs, logp);
    let neg_row_entropy = tape.sum_cols(plogp);
    let row_entropy = tape.neg(neg_row_entropy);
    let entropy = tape.mean_all(row_entropy);

    let weighted_vf = tape.scale(l_vf, cfg.value_coef);
    let partial = tape.sub(l_clip, weighted_vf);
    let weighted_ent = tape.scale(entropy, cfg.entropy_coef);
    let total = tape.add(partial, weighted_ent);
    let objective_neg = tape.neg(total);

    let (vc, vv, ve) = (
        tape.value(l_clip)[(0, 0)],
        tape.value(l_vf)[(0, 0)],
        tape.value(entropy)[(0, 0)],
    );
    if !(vc.is_finite() && vv.is_finite() && ve.is_finite()) {
        return Err(LossError::NonFiniteLoss {
            l_clip: vc,
            l_vf: vv,
            entropy: ve,
        });
    }

    Ok(LossVars {
        forward: fwd,
        l_clip,
        l_vf,
        entropy,
        total,
        objective_neg,
    })
}

// ====================================================================
// Training records and sinks
// ====================================================================

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Environment steps taken when the update finished.
    pub step: usize,
    pub l_clip: f64,
    pub l_vf: f64,
    pub entropy: f64,
    pub total: f64,
    /// Mean per-transition reward of the rollout the update consumed.
    pub mean_reward: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub step: usize,
    pub chronic: usize,
    pub opponent: bool,
    pub episode_len: usize,
    pub reward_sum: f64,
    pub completed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub episodes: Vec<EvalEpisode>,
}

/// Receives training progress; the eval hook may stop the run early.
pub trait TrainSink {
    fn on_update(&mut self, _record: &UpdateRecord) {}
    fn on_eval(&mut self, _point: &EvalPoint, _policy: &Policy) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

/// Discards everything.
pub struct NullSink;
impl TrainSink for NullSink {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReason {
    BudgetExhausted,
    EarlyStop,
    Diverged(String),
}

pub struct TrainOutcome {
    pub env_steps: usize,
    pub evals: Vec<EvalPoint>,
    pub updates: Vec<UpdateRecord>,
    pub stop: StopReason,
}

// ====================================================================
// The trainer
// ====================================================================

struct WorkerState<'a> {
    env: Env<'a>,
    obs: Observation,
}

pub struct Trainer<'a> {
    grid: &'a Grid,
    chronics: &'a [Chronic],
    train_ids: Vec<usize>,
    eval_ids: Vec<usize>,
    env_cfg: EnvConfig,
    cfg: PPOConfig,
    pub policy: Policy,
    opt: Adam,
    rng_actions: ChaCha8Rng,
    rng_scenarios: ChaCha8Rng,
    rng_env_seeds: ChaCha8Rng,
    rng_update: ChaCha8Rng,
    workers: Vec<WorkerState<'a>>,
    env_steps: usize,
}

fn spawn_env<'a>(
    grid: &'a Grid,
    chronics: &'a [Chronic],
    train_ids: &[usize],
    env_cfg: &EnvConfig,
    rng_scenarios: &mut ChaCha8Rng,
    rng_env_seeds: &mut ChaCha8Rng,
) -> Env<'a> {
    let scenario = sample_scenario(rng_scenarios, train_ids);
    let slice = chronics::slice(&chronics[scenario.chronic], &scenario)
        .expect("sampled scenario exceeds its chronic");
    let seed = rand::Rng::gen::<u64>(rng_env_seeds);
    Env::new(grid, slice, env_cfg.clone(), seed)
}

impl<'a> Trainer<'a> {
    pub fn new(
        grid: &'a Grid,
        chronics: &'a [Chronic],
        train_ids: Vec<usize>,
        eval_ids: Vec<usize>,
        encoder: EncoderKind,
        env_cfg: EnvConfig,
        cfg: PPOConfig,
    ) -> Self {
        cfg.validate().expect("invalid PPO configuration");
        assert!(!train_ids.is_empty(), "no training chronics");
        let policy = Policy::new(encoder, grid, cfg.seed);
        let opt = Adam::new(&policy.params, cfg.learning_rate);
        let mut rng_scenarios = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0001));
        let mut rng_env_seeds = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0002));
        let workers = (0..cfg.workers)
            .map(|_| {
                let env = spawn_env(
                    grid,
                    chronics,
                    &train_ids,
                    &env_cfg,
                    &mut rng_scenarios,
                    &mut rng_env_seeds,
                );
                let obs = policy.observe(grid, env.state(), env.result());
                WorkerState { env, obs }
            })
            .collect();
        Trainer {
            grid,
            chronics,
            train_ids,
            eval_ids,
            env_cfg,
            rng_actions: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0003)),
            rng_update: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0004)),
            rng_scenarios,
            rng_env_seeds,
            policy,
            opt,
            cfg,
            workers,
            env_steps: 0,
        }
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    /// Continue counting from a checkpointed run. Optimizer moments are
    /// not restored; they restart from zero.
    pub fn resume_at(&mut self, env_steps: usize) {
        self.env_steps = env_steps;
    }

    /// One lockstep rollout of `rollout_len` steps across all workers,
    /// with GAE and frozen TD targets computed per worker trajectory.
    pub fn collect_rollouts(&mut self) -> RolloutBuffer {
        let t_len = self.cfg.rollout_len;
        let n_workers = self.cfg.workers;
        let mut per_worker: Vec<Vec<Transition>> =
            (0..n_workers).map(|_| Vec::with_capacity(t_len)).collect();

        for _ in 0..t_len {
            let obs_now: Vec<Observation> =
                self.workers.iter().map(|w| w.obs.clone()).collect();
            let batch = self.policy.collate(&obs_now);
            let (logits, values) = self.policy.forward_values(&batch);

            for (wi, obs) in obs_now.into_iter().enumerate() {
                let worker = &mut self.workers[wi];
                let mask = worker.env.mask();
                let row: Vec<f64> = logits.row(wi).to_vec();
                let dist = MaskedCategoricalSet::from_logits(self.policy.layout(), &row, &mask);
                let choices = dist.sample(&mut self.rng_actions);
                let log_prob = dist.log_prob(&choices);
                let out = worker
                    .env
                    .step(&choices)
                    .expect("worker stepped a finished episode");
                let done = out.terminated || out.truncated;
                per_worker[wi].push(Transition {
                    obs,
                    choices,
                    mask,
                    log_prob,
                    value: values[(wi, 0)],
                    reward: out.reward,
                    done,
                });
                if done {
                    worker.env = spawn_env(
                        self.grid,
                        self.chronics,
                        &self.train_ids,
                        &self.env_cfg,
                        &mut self.rng_scenarios,
                        &mut self.rng_env_seeds,
                    );
                }
                worker.obs =
                    self.policy
                        .observe(self.grid, worker.env.state(), worker.env.result());
            }
            self.env_steps += n_workers;
        }

        // Old-policy bootstrap values for the states after the last step.
        let obs_now: Vec<Observation> = self.workers.iter().map(|w| w.obs.clone()).collect();
        let batch = self.policy.collate(&obs_now);
        let (_, boot_values) = self.policy.forward_values(&batch);

        let mut transitions = Vec::with_capacity(t_len * n_workers);
        let mut advantages = Vec::with_capacity(t_len * n_workers);
        let mut returns = Vec::with_capacity(t_len * n_workers);
        let mut td_targets = Vec::with_capacity(t_len * n_workers);
        for (wi, traj) in per_worker.into_iter().enumerate() {
            let rewards: Vec<f64> = traj.iter().map(|t| t.reward).collect();
            let values: Vec<f64> = traj.iter().map(|t| t.value).collect();
            let dones: Vec<bool> = traj.iter().map(|t| t.done).collect();
            let bootstrap = boot_values[(wi, 0)];
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, bootstrap, self.cfg.gamma, self.cfg.lambda);
            for t in 0..traj.len() {
                let next_value = if dones[t] {
                    0.0
                } else if t + 1 < traj.len() {
                    values[t + 1]
                } else {
                    bootstrap
                };
                td_targets.push(rewards[t] + self.cfg.gamma * next_value);
            }
            advantages.extend(adv);
            returns.extend(ret);
            transitions.extend(traj);
        }
        RolloutBuffer {
            transitions,
            advantages,
            returns,
            td_targets,
            workers: n_workers,
            rollout_len: t_len,
        }
    }

    fn build_loss_inputs(&self, buffer: &RolloutBuffer, rows: &[usize]) -> LossInputs {
        let layout = self.policy.layout();
        let obs: Vec<Observation> = rows
            .iter()
            .map(|&i| buffer.transitions[i].obs.clone())
            .collect();
        let batch = self.policy.collate(&obs);

        let mut choice_cols = Vec::with_capacity(rows.len() * layout.n_elements());
        let mut masks = Vec::with_capacity(rows.len() * layout.total());
        let mut old_logp = Vec::with_capacity(rows.len());
        let mut advantages = Vec::with_capacity(rows.len());
        let mut td_targets = Vec::with_capacity(rows.len());
        for &i in rows {
            let tr = &buffer.transitions[i];
            for (e, &c) in tr.choices.iter().enumerate() {
                choice_cols.push(layout.offset(e) + c);
            }
            masks.extend_from_slice(&tr.mask);
            old_logp.push(tr.log_prob);
            advantages.push(buffer.advantages[i]);
            td_targets.push(buffer.td_targets[i]);
        }
        if self.cfg.normalize_advantages && advantages.len() > 1 {
            let n = advantages.len() as f64;
            let mean = advantages.iter().sum::<f64>() / n;
            let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt() + 1e-8;
            for a in &mut advantages {
                *a = (*a - mean) / std;
            }
        }
        LossInputs {
            batch,
            choice_cols,
            masks,
            old_logp,
            advantages,
            td_targets,
        }
    }

    fn update(&mut self, buffer: &RolloutBuffer) -> Result<UpdateRecord, LossError> {
        let n = buffer.transitions.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng_update);
            for chunk in order.chunks(self.cfg.minibatch) {
                let inputs = self.build_loss_inputs(buffer, chunk);
                let mut loss = ppo_loss(&self.policy, &inputs, &self.cfg)?;
                loss.forward.tape.backward(loss.objective_neg);
                let grads = loss.forward.gradients();
                self.opt.step(&mut self.policy.params, &grads);
                sums.0 += loss.scalar(loss.l_clip);
                sums.1 += loss.scalar(loss.l_vf);
                sums.2 += loss.scalar(loss.entropy);
                sums.3 += loss.scalar(loss.total);
                batches += 1;
            }
        }
        let k = batches.max(1) as f64;
        let mean_reward = buffer.transitions.iter().map(|t| t.reward).sum::<f64>() / n as f64;
        Ok(UpdateRecord {
            step: self.env_steps,
            l_clip: sums.0 / k,
            l_vf: sums.1 / k,
            entropy: sums.2 / k,
            total: sums.3 / k,
            mean_reward,
        })
    }

    /// Deterministic evaluation on every eval chronic, with and without
    /// the opponent, from offset 0 over the chronic's full length.
    pub fn eval_point(&self) -> EvalPoint {
        let mut episodes = Vec::new();
        for &cid in &self.eval_ids {
            for opponent in [false, true] {
                let mut cfg = self.env_cfg.clone();
                cfg.opponent.enabled = opponent;
                let scenario = Scenario {
                    chronic: cid,
                    offset_days: 0,
                    horizon: self.chronics[cid].len(),
                };
                let trace = run_episode(
                    self.grid,
                    &self.chronics[cid],
                    &scenario,
                    cfg,
                    eval_opponent_seed(cid),
                    &EpisodeAgent::Greedy(&self.policy),
                )
                .expect("evaluation scenario exceeds its chronic");
                episodes.push(EvalEpisode {
                    step: self.env_steps,
                    chronic: cid,
                    opponent,
                    episode_len: trace.survived,
                    reward_sum: trace.reward_sum,
                    completed: trace.completed,
                });
            }
        }
        EvalPoint {
            step: self.env_steps,
            episodes,
        }
    }

    /// The full loop: evaluate, collect, update, repeat until the step
    /// budget is spent, the sink stops the run, or an update diverges.
    pub fn train(&mut self, sink: &mut dyn TrainSink) -> TrainOutcome {
        let mut evals: Vec<EvalPoint> = Vec::new();
        let mut updates = Vec::new();
        let mut next_eval = self.env_steps;
        let mut stop = StopReason::BudgetExhausted;

        'run: loop {
            if self.env_steps >= next_eval {
                let point = self.eval_point();
                evals.push(point.clone());
                if sink.on_eval(&point, &self.policy).is_break() {
                    stop = StopReason::EarlyStop;
                    break 'run;
                }
                while next_eval <= self.env_steps {
                    next_eval += self.cfg.eval_every.max(1);
                }
            }
            if self.env_steps >= self.cfg.total_steps {
                break;
            }
            let buffer = self.collect_rollouts();
            match self.update(&buffer) {
                Ok(record) => {
                    sink.on_update(&record);
                    updates.push(record);
                }
                Err(e) => {
                    stop = StopReason::Diverged(e.to_string());
                    break;
                }
            }
        }

        if stop == StopReason::BudgetExhausted
            && evals.last().map(|p| p.step) != Some(self.env_steps)
        {
            let point = self.eval_point();
            evals.push(point.clone());
            if sink.on_eval(&point, &self.policy).is_break() {
                stop = StopReason::EarlyStop;
            }
        }

        TrainOutcome {
            env_steps: self.env_steps,
            evals,
            updates,
            stop,
        }
    }
}

/// Fixed per-chronic opponent seed so evaluation traces are identical
/// across runs and training steps.
pub fn eval_opponent_seed(chronic: usize) -> u64 {
    0x00e7_a100 ^ (chronic as u64)
}
