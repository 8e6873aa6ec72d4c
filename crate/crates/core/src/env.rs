//! The sequential decision environment: one episode walks a chronic window
//! five simulated minutes per step, applying the agent's topology action,
//! then maintenance and opponent attacks, then the power flow and its
//! overflow protections.
//!
//! The substep order inside [`Env::step`] is fixed and load-bearing:
//! decode/classify, apply the delta and start cooldowns, process
//! maintenance then the opponent, pull injections, solve, run the hard
//! then soft overflow protections, check terminal conditions, compute the
//! reward, and finally decrement every timer and advance time. Cooldowns
//! set during a step therefore start counting from the next one.

use crate::action::{self, ActionClass, ActionLayout};
use crate::chronics::ChronicSlice;
use crate::grid::{apply_delta, BusAssignment, Grid, GridState};
use crate::powerflow::{apply_slack_limits, solve, Injections, PowerFlowResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Line-attacking adversary settings. Each step with no attack running and
/// the cooldown expired, the opponent strikes with `attack_prob`, forcing a
/// uniformly chosen conducting line open for `attack_duration` steps; the
/// cooldown clock starts at the attack itself.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OpponentConfig {
    pub enabled: bool,
    pub attack_prob: f64,
    pub attack_duration: u32,
    pub attack_cooldown: u32,
}

impl Default for OpponentConfig {
    fn default() -> Self {
        OpponentConfig {
            enabled: false,
            attack_prob: 0.02,
            attack_duration: 12,
            attack_cooldown: 144,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Steps a substation stays locked after one of its generators or loads
    /// moves.
    pub sub_cooldown_steps: u32,
    /// Steps a line stays locked after the agent switches it.
    pub line_cooldown_steps: u32,
    /// Steps an automatically tripped line stays unavailable.
    pub reconnection_steps: u32,
    /// Loading at or above which a line trips instantly.
    pub hard_overflow_rho: f64,
    /// Consecutive steps of rho > 1 tolerated before a soft trip (the trip
    /// happens on the following step).
    pub soft_overflow_patience: u32,
    /// Scale constant in the loss reward; cancels algebraically.
    pub reward_m: f64,
    pub opponent: OpponentConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            sub_cooldown_steps: 3,
            line_cooldown_steps: 3,
            reconnection_steps: 12,
            hard_overflow_rho: 2.0,
            soft_overflow_patience: 3,
            reward_m: 1.0,
            opponent: OpponentConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode is over; construct a new environment")]
    EpisodeOver,
}

/// Everything one step produced. `result` is the final solve after all
/// automatic disconnections of the step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub class: ActionClass,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Line forced open by the opponent this step, if any.
    pub attacked_line: Option<usize>,
    /// Lines tripped by overflow protection this step.
    pub tripped_lines: Vec<usize>,
    pub result: PowerFlowResult,
}

/// The loss-based reward: with `MaxLoss = m * sum(gen)` and
/// `Loss = m * (sum(gen) - sum(load))`, the reward is
/// `(MaxLoss - Loss) / MaxLoss`, or 1 when `MaxLoss` is exactly zero.
/// Generation is the balanced per-generator output, load the served load.
pub fn loss_reward(m: f64, result: &PowerFlowResult) -> f64 {
    let sum_gen: f64 = result.gen_p.iter().sum();
    let sum_load: f64 = result.load_p.iter().sum();
    let max_loss = m * sum_gen;
    let loss = m * (sum_gen - sum_load);
    if max_loss == 0.0 {
        1.0
    } else {
        (max_loss - loss) / max_loss
    }
}

pub struct Env<'a> {
    grid: &'a Grid,
    slice: ChronicSlice<'a>,
    cfg: EnvConfig,
    layout: ActionLayout,
    state: GridState,
    /// Per line, upcoming maintenance windows in window coordinates.
    maint_queue: Vec<VecDeque<(usize, u32)>>,
    opp_rng: ChaCha8Rng,
    opp_cooldown: u32,
    last: PowerFlowResult,
    done: bool,
}

impl<'a> Env<'a> {
    /// Builds the environment at the start of `slice` with the default all-on-busbar-1
    /// topology and solves the first row for the initial observation.
    pub fn new(grid: &'a Grid, slice: ChronicSlice<'a>, cfg: EnvConfig, opponent_seed: u64) -> Self {
        let mut maint_queue: Vec<VecDeque<(usize, u32)>> = vec![VecDeque::new(); grid.n_line()];
        for ev in slice.maintenance() {
            maint_queue[ev.line].push_back((ev.start, ev.duration as u32));
        }
        let mut env = Env {
            grid,
            slice,
            cfg,
            layout: ActionLayout::new(grid),
            state: GridState::default_topology(grid),
            maint_queue,
            opp_rng: ChaCha8Rng::seed_from_u64(opponent_seed),
            opp_cooldown: 0,
            last: PowerFlowResult {
                line_flow: vec![],
                rho: vec![],
                line_loss: vec![],
                total_loss: 0.0,
                slack_p: 0.0,
                gen_p: vec![],
                load_p: vec![],
                node_angle: Default::default(),
                unserved: vec![],
                diverged: false,
            },
            done: false,
        };
        env.process_maintenance();
        env.last = env.solve_now();
        env
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn layout(&self) -> &ActionLayout {
        &self.layout
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    /// Final solve of the previous step (or of row 0 right after
    /// construction): what the agent observes.
    pub fn result(&self) -> &PowerFlowResult {
        &self.last
    }

    pub fn mask(&self) -> Vec<bool> {
        action::action_mask(self.grid, &self.state)
    }

    pub fn step_index(&self) -> usize {
        self.state.step_index
    }

    pub fn horizon(&self) -> usize {
        self.slice.len()
    }

    pub fn done(&self) -> bool {
        self.done
    }

    /// Electricity price of the row the *next* step will face.
    pub fn price(&self) -> f64 {
        self.slice.price(self.state.step_index.min(self.slice.len() - 1))
    }

    /// Total scheduled load of the row the next step will face.
    pub fn scheduled_load(&self) -> f64 {
        self.slice
            .load_p(self.state.step_index.min(self.slice.len() - 1))
            .sum()
    }

    fn injections(&self, t: usize) -> Injections {
        Injections {
            gen_p: self.slice.gen_p(t).to_vec(),
            load_p: self.slice.load_p(t).to_vec(),
        }
    }

    fn solve_now(&self) -> PowerFlowResult {
        let t = self.state.step_index.min(self.slice.len() - 1);
        solve(self.grid, &self.state, &self.injections(t))
            .expect("environment-built injections are well-formed")
    }

    /// Refreshes `state.maintenance` from the event queues at the current
    /// step and forces open any line inside an active window.
    fn process_maintenance(&mut self) {
        let t = self.state.step_index;
        for l in 0..self.grid.n_line() {
            while let Some(&(start, duration)) = self.maint_queue[l].front() {
                if start + duration as usize <= t {
                    self.maint_queue[l].pop_front();
                } else {
                    break;
                }
            }
            self.state.maintenance[l] = match self.maint_queue[l].front() {
                Some(&(start, duration)) if t < start => {
                    Some(((start - t) as u32, duration))
                }
                Some(&(start, duration)) => {
                    let remaining = duration - (t - start) as u32;
                    self.state.line_bus[l] =
                        (BusAssignment::Disconnected, BusAssignment::Disconnected);
                    Some((0, remaining))
                }
                None => None,
            };
        }
    }

    fn run_opponent(&mut self) -> Option<usize> {
        let opp = &self.cfg.opponent;
        if !opp.enabled
            || self.opp_cooldown > 0
            || self.state.attack_timer.iter().any(|&t| t > 0)
        {
            return None;
        }
        if self.opp_rng.gen::<f64>() >= opp.attack_prob {
            return None;
        }
        let candidates: Vec<usize> = (0..self.grid.n_line())
            .filter(|&l| self.state.line_conducting(l))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let line = candidates[self.opp_rng.gen_range(0..candidates.len())];
        self.state.line_bus[line] = (BusAssignment::Disconnected, BusAssignment::Disconnected);
        self.state.attack_timer[line] = opp.attack_duration;
        self.opp_cooldown = opp.attack_cooldown + opp.attack_duration;
        Some(line)
    }

    /// Advances one step. See the module docs for the substep order.
    pub fn step(&mut self, choices: &[usize]) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }

        // (1) Decode and classify; anything not legal degrades to
        // do-nothing but keeps its class.
        let mask = self.mask();
        let decoded = action::decode(self.grid, &self.state, &mask, choices);
        let mut class = decoded.class;
        let delta = if class == ActionClass::Legal {
            decoded.delta
        } else {
            Default::default()
        };

        // (2) Apply the delta and start cooldowns: switched lines lock
        // themselves, moved generators and loads lock their substation.
        for &(l, _) in &delta.lines {
            self.state.line_cooldown[l] = self.cfg.line_cooldown_steps;
        }
        for &(g, _) in &delta.gens {
            self.state.sub_cooldown[self.grid.gen_sub(g)] = self.cfg.sub_cooldown_steps;
        }
        for &(l, _) in &delta.loads {
            self.state.sub_cooldown[self.grid.load_sub(l)] = self.cfg.sub_cooldown_steps;
        }
        apply_delta(&mut self.state, &delta);

        // (3) Maintenance windows, then the opponent.
        self.process_maintenance();
        let attacked_line = self.run_opponent();

        // (4) + (5) This row's injections, solved.
        let t = self.state.step_index;
        let inj = self.injections(t);
        let mut result =
            solve(self.grid, &self.state, &inj).expect("environment-built injections");

        // (6) Hard overflows trip instantly and cascade within the step.
        let mut tripped_lines = Vec::new();
        for _ in 0..self.grid.n_line() {
            if result.diverged {
                break;
            }
            let hard: Vec<usize> = (0..self.grid.n_line())
                .filter(|&l| {
                    self.state.line_conducting(l) && result.rho[l] >= self.cfg.hard_overflow_rho
                })
                .collect();
            if hard.is_empty() {
                break;
            }
            for &l in &hard {
                self.state.line_bus[l] =
                    (BusAssignment::Disconnected, BusAssignment::Disconnected);
                self.state.reconnection_timer[l] = self.cfg.reconnection_steps;
                self.state.overflow_counter[l] = 0;
                tripped_lines.push(l);
            }
            result = solve(self.grid, &self.state, &inj).expect("environment-built injections");
        }

        // (7) Soft overflows accumulate; a line over 100% for more than
        // `patience` consecutive steps trips, with a single re-solve.
        let mut soft_tripped = Vec::new();
        if !result.diverged {
            for l in 0..self.grid.n_line() {
                if self.state.line_conducting(l) && result.rho[l] > 1.0 {
                    self.state.overflow_counter[l] += 1;
                    if self.state.overflow_counter[l] > self.cfg.soft_overflow_patience {
                        soft_tripped.push(l);
                    }
                } else {
                    self.state.overflow_counter[l] = 0;
                }
            }
            if !soft_tripped.is_empty() {
                for &l in &soft_tripped {
                    self.state.line_bus[l] =
                        (BusAssignment::Disconnected, BusAssignment::Disconnected);
                    self.state.reconnection_timer[l] = self.cfg.reconnection_steps;
                    self.state.overflow_counter[l] = 0;
                    tripped_lines.push(l);
                }
                result =
                    solve(self.grid, &self.state, &inj).expect("environment-built injections");
            }
        }

        // (8) Terminal conditions.
        let failed = result.diverged
            || !result.unserved.is_empty()
            || !apply_slack_limits(self.grid, &result);
        let terminated = failed;
        let truncated = !failed && t + 1 == self.slice.len();
        if failed && class == ActionClass::Legal {
            class = ActionClass::Erroneous;
        }

        // (9) Reward.
        let reward = if class == ActionClass::Legal {
            loss_reward(self.cfg.reward_m, &result)
        } else {
            0.0
        };

        // (10) Every timer ticks down, including ones set this step, and
        // time advances.
        for v in [
            &mut self.state.line_cooldown,
            &mut self.state.reconnection_timer,
            &mut self.state.attack_timer,
        ] {
            for x in v.iter_mut() {
                *x = x.saturating_sub(1);
            }
        }
        for x in self.state.sub_cooldown.iter_mut() {
            *x = x.saturating_sub(1);
        }
        self.opp_cooldown = self.opp_cooldown.saturating_sub(1);
        self.state.step_index += 1;
        // Refresh the maintenance bookkeeping for the new step so the mask
        // the agent sees next reflects windows opening or closing right now.
        self.process_maintenance();
        self.done = terminated || truncated;
        self.last = result.clone();

        Ok(StepOutcome {
            class,
            reward,
            terminated,
            truncated,
            attacked_line,
            tripped_lines,
            result,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chronics::{Chronic, Scenario};
    use crate::fixtures;
    use crate::grid::{
        GenType, GeneratorSpec, Grid, GridSpec, LineSpec, LoadSpec, SubstationSpec,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn flat_chronic(grid: &Grid, loads: &[Vec<f64>]) -> Chronic {
        let steps = loads.len();
        let mut load_p = Array2::zeros((steps, grid.n_load()));
        for (t, row) in loads.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                load_p[(t, l)] = v;
            }
        }
        let mut gen_p = Array2::zeros((steps, grid.n_gen()));
        for t in 0..steps {
            let total: f64 = loads[t].iter().sum();
            gen_p[(t, 0)] = total;
        }
        Chronic {
            id: 0,
            gen_p,
            load_p,
            price: vec![40.0; steps],
            maintenance: vec![],
        }
    }

    fn env_over<'a>(grid: &'a Grid, chronic: &'a Chronic, cfg: EnvConfig) -> Env<'a> {
        let scenario = Scenario {
            chronic: 0,
            offset_days: 0,
            horizon: chronic.len(),
        };
        Env::new(grid, crate::chronics::slice(chronic, &scenario).unwrap(), cfg, 7)
    }

    fn window<'a>(chronic: &'a Chronic, horizon: usize) -> ChronicSlice<'a> {
        let scenario = Scenario {
            chronic: 0,
            offset_days: 0,
            horizon,
        };
        crate::chronics::slice(chronic, &scenario).unwrap()
    }

    fn two_bus_grid(p_min: f64, limit: f64) -> Grid {
        Grid::new(GridSpec {
            substations: vec![
                SubstationSpec { id: "a".into() },
                SubstationSpec { id: "b".into() },
            ],
            generators: vec![GeneratorSpec {
                id: "g".into(),
                substation_id: "a".into(),
                p_min,
                p_max: 150.0,
                max_ramp_up: 10.0,
                max_ramp_down: 10.0,
                min_uptime: 0,
                min_downtime: 0,
                cost_per_mw: 10.0,
                startup_cost: 0.0,
                shutdown_cost: 0.0,
                gen_type: GenType::Thermal,
            }],
            loads: vec![LoadSpec {
                id: "d".into(),
                substation_id: "b".into(),
            }],
            lines: vec![LineSpec {
                id: "l".into(),
                from_substation_id: "a".into(),
                to_substation_id: "b".into(),
                reactance: 0.1,
                resistance: 0.0,
                thermal_limit: limit,
            }],
            slack_generator: "g".into(),
            base_power: 100.0,
        })
        .unwrap()
    }

    #[test]
    fn do_nothing_steps_earn_the_loss_reward() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let slice = window(&chronics[0], 288);
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 1);

        let dn = env.layout().do_nothing();
        for _ in 0..10 {
            let out = env.step(&dn).unwrap();
            assert_eq!(out.class, ActionClass::Legal);
            assert!(!out.terminated && !out.truncated);
            assert!(out.tripped_lines.is_empty());
            let sum_gen: f64 = out.result.gen_p.iter().sum();
            let sum_load: f64 = out.result.load_p.iter().sum();
            assert_abs_diff_eq!(out.reward, sum_load / sum_gen, epsilon = 1e-12);
            assert!(out.reward > 0.9 && out.reward < 1.0);
        }
    }

    #[test]
    fn stranding_a_load_terminates_with_zero_reward() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let slice = window(&chronics[0], 288);
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 1);

        // Moving load_0 to busbar 2 alone leaves it on an island with no
        // generator.
        let mut choices = env.layout().do_nothing();
        choices[2] = 2;
        let out = env.step(&choices).unwrap();
        assert!(out.terminated);
        assert_eq!(out.class, ActionClass::Erroneous);
        assert_eq!(out.reward, 0.0);
        assert!(env.done());
        assert!(matches!(env.step(&choices), Err(EnvError::EpisodeOver)));
    }

    #[test]
    fn line_switch_locks_the_line_for_three_steps() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let slice = window(&chronics[0], 288);
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 1);
        let layout = env.layout().clone();
        let line0 = layout.n_gen + layout.n_load;

        let mut switch = layout.do_nothing();
        switch[line0] = 3; // (busbar1, busbar2)
        let out = env.step(&switch).unwrap();
        assert_eq!(out.class, ActionClass::Legal);
        assert!(!out.terminated, "line_0 busbar move must be survivable");
        assert_eq!(env.state().line_cooldown[0], 2);
        assert!(env.state().sub_cooldown.iter().all(|&c| c == 0));

        // Blocked for the two following steps, free on the third.
        let mut back = layout.do_nothing();
        back[line0] = 2;
        for expect in [ActionClass::Illegal, ActionClass::Illegal, ActionClass::Legal] {
            let out = env.step(&back).unwrap();
            assert_eq!(out.class, expect);
            if expect == ActionClass::Illegal {
                assert_eq!(out.reward, 0.0);
            }
        }
    }

    #[test]
    fn moving_a_generator_locks_its_substation() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let slice = window(&chronics[0], 288);
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 1);
        let layout = env.layout().clone();

        // gen_1 to busbar 2: it ends up alone, which only costs output.
        let mut choices = layout.do_nothing();
        choices[1] = 3;
        let out = env.step(&choices).unwrap();
        assert_eq!(out.class, ActionClass::Legal);
        assert!(!out.terminated);
        assert_abs_diff_eq!(out.result.gen_p[1], 0.0);
        assert_eq!(env.state().sub_cooldown[1], 2);

        // Everything touching sub_1 is now locked: gen_1 itself, and lines
        // 0, 3, 4.
        let mask = env.mask();
        for (e, restricted) in [(1usize, true), (0, false)] {
            let open = (0..layout.dim(e))
                .filter(|&c| mask[layout.offset(e) + c])
                .count();
            assert_eq!(open == 1, restricted, "element {e}");
        }
        for (line, restricted) in [(0usize, true), (3, true), (4, true), (1, false)] {
            let e = layout.n_gen + layout.n_load + line;
            let open = (0..layout.dim(e))
                .filter(|&c| mask[layout.offset(e) + c])
                .count();
            assert_eq!(open == 1, restricted, "line {line}");
        }
    }

    #[test]
    fn maintenance_window_forces_and_holds_the_line_open() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let mut chronic = chronics[0].clone();
        chronic.maintenance = vec![crate::chronics::MaintenanceEvent {
            line: 6,
            start: 2,
            duration: 3,
        }];
        let slice = window(&chronic, 288);
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 1);
        let layout = env.layout().clone();
        let dn = layout.do_nothing();
        let line6 = layout.n_gen + layout.n_load + 6;

        // Pending window visible but not yet restricting.
        assert_eq!(env.state().maintenance[6], Some((2, 3)));
        assert!(env.mask()[layout.offset(line6)..layout.offset(line6) + 6]
            .iter()
            .all(|&m| m));

        env.step(&dn).unwrap(); // t = 0
        env.step(&dn).unwrap(); // t = 1
        // t = 2, 3, 4: active window. The post-step state already carries
        // the next step's bookkeeping.
        for after in [Some((0u32, 2u32)), Some((0, 1)), None] {
            let out = env.step(&dn).unwrap();
            assert!(!out.terminated);
            assert!(!env.state().line_conducting(6));
            assert_eq!(env.state().maintenance[6], after);
        }

        // t = 5: window over, but the line stays open until reconnected.
        let mut reconnect = layout.do_nothing();
        reconnect[line6] = 2;
        let out = env.step(&reconnect).unwrap();
        assert_eq!(out.class, ActionClass::Legal);
        assert!(env.state().line_conducting(6));
        assert!(out.result.rho[6] > 0.0);
    }

    #[test]
    fn masked_line_reconnect_during_maintenance_is_illegal() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let mut chronic = chronics[0].clone();
        chronic.maintenance = vec![crate::chronics::MaintenanceEvent {
            line: 6,
            start: 1,
            duration: 4,
        }];
        let slice = window(&chronic, 288);
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 1);
        let layout = env.layout().clone();
        let dn = layout.do_nothing();
        env.step(&dn).unwrap(); // t = 0
        env.step(&dn).unwrap(); // t = 1: window active now

        let mut reconnect = layout.do_nothing();
        reconnect[layout.n_gen + layout.n_load + 6] = 2;
        let out = env.step(&reconnect).unwrap();
        assert_eq!(out.class, ActionClass::Illegal);
        assert_eq!(out.reward, 0.0);
        assert!(!env.state().line_conducting(6));
    }

    #[test]
    fn soft_overflow_trips_on_the_fourth_consecutive_step() {
        let grid = two_bus_grid(0.0, 15.0);
        // rho ~ 1.07 on overload rows; a clean row in between resets the
        // counter.
        let rows: Vec<Vec<f64>> = [16.0, 16.0, 10.0, 16.0, 16.0, 16.0, 16.0, 16.0]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let chronic = flat_chronic(&grid, &rows);
        let mut env = env_over(&grid, &chronic, EnvConfig::default());
        let dn = env.layout().do_nothing();

        for t in 0..6 {
            let out = env.step(&dn).unwrap();
            assert!(!out.terminated, "no trip expected at t = {t}");
            assert!(out.tripped_lines.is_empty());
        }
        assert_eq!(env.state().overflow_counter[0], 3);
        // Fourth consecutive overloaded step: trip, and the lone load goes
        // dark, ending the episode.
        let out = env.step(&dn).unwrap();
        assert_eq!(out.tripped_lines, vec![0]);
        assert!(out.terminated);
        assert_eq!(out.class, ActionClass::Erroneous);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn hard_overflow_trips_immediately() {
        let grid = two_bus_grid(0.0, 15.0);
        let chronic = flat_chronic(&grid, &[vec![31.0]]);
        let mut env = env_over(&grid, &chronic, EnvConfig::default());
        let dn = env.layout().do_nothing();
        let out = env.step(&dn).unwrap();
        assert_eq!(out.tripped_lines, vec![0]);
        assert!(out.terminated);
        // The trip left a reconnection timer behind (decremented once).
        assert_eq!(env.state().reconnection_timer[0], 11);
    }

    #[test]
    fn slack_below_p_min_terminates() {
        let grid = two_bus_grid(5.0, 15.0);
        let chronic = flat_chronic(&grid, &[vec![3.0]]);
        let mut env = env_over(&grid, &chronic, EnvConfig::default());
        let dn = env.layout().do_nothing();
        let out = env.step(&dn).unwrap();
        assert!(out.terminated);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn horizon_end_truncates_with_a_normal_reward() {
        let grid = two_bus_grid(0.0, 15.0);
        let chronic = flat_chronic(&grid, &[vec![10.0], vec![10.0], vec![10.0]]);
        let mut env = env_over(&grid, &chronic, EnvConfig::default());
        let dn = env.layout().do_nothing();
        env.step(&dn).unwrap();
        env.step(&dn).unwrap();
        let out = env.step(&dn).unwrap();
        assert!(out.truncated);
        assert!(!out.terminated);
        assert_eq!(out.reward, 1.0); // lossless line serves everything
        assert!(env.done());
    }

    #[test]
    fn opponent_attack_blocks_reconnection_for_its_duration() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let slice = window(&chronics[0], 288);
        let mut cfg = EnvConfig::default();
        cfg.opponent = OpponentConfig {
            enabled: true,
            attack_prob: 1.0,
            attack_duration: 12,
            attack_cooldown: 144,
        };
        let mut env = Env::new(&grid, slice, cfg, 99);
        let layout = env.layout().clone();
        let dn = layout.do_nothing();

        let out = env.step(&dn).unwrap();
        let line = out.attacked_line.expect("attack_prob = 1 must fire");
        assert!(!env.state().line_conducting(line));
        assert_eq!(env.state().attack_timer[line], 11);

        // Survivable on this fixture at off-peak rows, and the line is
        // masked for the whole window.
        assert!(!out.terminated);
        let e = layout.n_gen + layout.n_load + line;
        let mut reconnect = layout.do_nothing();
        reconnect[e] = 2;
        let out2 = env.step(&reconnect).unwrap();
        assert_eq!(out2.class, ActionClass::Illegal);
        // One attack only while the cooldown runs.
        assert_eq!(out2.attacked_line, None);
    }

    #[test]
    fn disabled_opponent_never_attacks() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let slice = window(&chronics[0], 288);
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 99);
        let dn = env.layout().do_nothing();
        for _ in 0..20 {
            let out = env.step(&dn).unwrap();
            assert_eq!(out.attacked_line, None);
        }
    }

    #[test]
    fn reward_is_bit_identical_under_doubled_m() {
        let grid = fixtures::case5_grid();
        let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
        let mut rewards = Vec::new();
        for m in [1.0, 2.0] {
            let slice = window(&chronics[3], 288);
            let mut cfg = EnvConfig::default();
            cfg.reward_m = m;
            let mut env = Env::new(&grid, slice, cfg, 1);
            let dn = env.layout().do_nothing();
            let mut seq = Vec::new();
            for _ in 0..50 {
                let out = env.step(&dn).unwrap();
                seq.push(out.reward.to_bits());
                if env.done() {
                    break;
                }
            }
            rewards.push(seq);
        }
        assert_eq!(rewards[0], rewards[1]);
    }
}
