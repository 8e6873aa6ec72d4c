//! The acceptance gate: ten end-to-end criteria, each printing one
//! verdict line. Tolerances are pinned in the assertions.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use gridtac::action::{decode, sample_masked_uniform, ActionClass, ActionLayout};
use gridtac::chronics::{self, sample_scenario, Chronic, Scenario, OFFSET_DAYS, TRAIN_HORIZON};
use gridtac::env::{Env, EnvConfig};
use gridtac::episode::{run_episode, EpisodeAgent};
use gridtac::fixtures;
use gridtac::grid::{
    islands, BusAssignment, ElecNode, GenType, GeneratorSpec, Grid, GridSpec, GridState,
    LineSpec, LoadSpec, SubstationSpec,
};
use gridtac::metrics::{do_nothing_baseline, episode_cost, l2rpn_score, ScoreConfig};
use gridtac::nn::dist::MaskedCategoricalSet;
use gridtac::nn::net::{collate_elem, collate_sub, EncoderKind, Observation, Policy};
use gridtac::nn::tape::{check_grads, check_grads_with_step};
use gridtac::obs::{ElemGraphObs, SubGraphObs, SUB_EDGE_FEAT, SUB_NODE_FEAT};
use gridtac::powerflow::{solve, Injections};
use gridtac::ppo::{
    self, compute_gae, ppo_loss, EvalPoint, LossInputs, NullSink, PPOConfig, StopReason,
    TrainSink, Trainer,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::time::{Duration, Instant};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let word = if ok { "PASS" } else { "FAIL" };
    println!("criterion {n:02} {name}: {word} ({detail})");
    assert!(ok, "criterion {n:02} {name} failed: {detail}");
}

fn fixture() -> (Grid, Vec<Chronic>) {
    let grid = fixtures::case5_grid();
    let chronics = fixtures::synth_chronics(&grid, fixtures::FIXTURE_SEED);
    (grid, chronics)
}

// ====================================================================
// 1. Mask soundness
// ====================================================================

#[test]
fn criterion_01_mask_soundness() {
    let start = Instant::now();
    let (grid, chronics) = fixture();
    let layout = ActionLayout::new(&grid);
    let all_ids: Vec<usize> = (0..chronics.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut cfg = EnvConfig::default();
    cfg.opponent.enabled = true;

    let mut checked = 0usize;
    let mut illegal = 0usize;
    let mut ambiguous = 0usize;
    while checked < 10_000 {
        let scenario = sample_scenario(&mut rng, &all_ids);
        let slice = chronics::slice(&chronics[scenario.chronic], &scenario).unwrap();
        let seed = rng.gen();
        let mut env = Env::new(&grid, slice, cfg.clone(), seed);
        // Walk into a random reachable state, then classify sampled
        // mask-supported actions while continuing to walk.
        let warmup = rng.gen_range(0..30);
        for _ in 0..warmup {
            if env.done() {
                break;
            }
            let mask = env.mask();
            let choices = sample_masked_uniform(&mut rng, &layout, &mask);
            env.step(&choices).unwrap();
        }
        for _ in 0..25 {
            if env.done() {
                break;
            }
            let mask = env.mask();
            let choices = sample_masked_uniform(&mut rng, &layout, &mask);
            match decode(&grid, env.state(), &mask, &choices).class {
                ActionClass::Illegal => illegal += 1,
                ActionClass::Ambiguous => ambiguous += 1,
                _ => {}
            }
            checked += 1;
            env.step(&choices).unwrap();
        }
    }
    let elapsed = start.elapsed();
    let ok = illegal == 0 && ambiguous == 0 && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "mask soundness",
        ok,
        &format!("{checked} sampled actions, {illegal} illegal, {ambiguous} ambiguous, {elapsed:.1?}"),
    );
}

// ====================================================================
// 2. Reward identity
// ====================================================================

#[test]
fn criterion_02_reward_identity() {
    let (grid, chronics) = fixture();
    let layout = ActionLayout::new(&grid);
    let all_ids: Vec<usize> = (0..chronics.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    let mut cfg_m = EnvConfig::default();
    cfg_m.reward_m = 7.0;
    let mut cfg_2m = EnvConfig::default();
    cfg_2m.reward_m = 14.0;

    let mut counted = 0usize;
    let mut max_dev = 0.0f64;
    let mut bit_mismatches = 0usize;
    while counted < 1_000 {
        let scenario = sample_scenario(&mut rng, &all_ids);
        let slice_a = chronics::slice(&chronics[scenario.chronic], &scenario).unwrap();
        let slice_b = chronics::slice(&chronics[scenario.chronic], &scenario).unwrap();
        let seed = rng.gen();
        let mut env_a = Env::new(&grid, slice_a, cfg_m.clone(), seed);
        let mut env_b = Env::new(&grid, slice_b, cfg_2m.clone(), seed);
        while !env_a.done() && counted < 1_000 {
            let mask = env_a.mask();
            let choices = sample_masked_uniform(&mut rng, &layout, &mask);
            let out_a = env_a.step(&choices).unwrap();
            let out_b = env_b.step(&choices).unwrap();
            if out_a.reward.to_bits() != out_b.reward.to_bits() {
                bit_mismatches += 1;
            }
            if out_a.class == ActionClass::Legal {
                let gen: f64 = out_a.result.gen_p.iter().sum();
                let load: f64 = out_a.result.load_p.iter().sum();
                if gen > 0.0 {
                    max_dev = max_dev.max((out_a.reward - load / gen).abs());
                    counted += 1;
                }
            }
        }
    }
    let ok = max_dev <= 1e-12 && bit_mismatches == 0;
    verdict(
        2,
        "reward identity",
        ok,
        &format!("{counted} legal steps, max |reward - load/gen| = {max_dev:.2e}, {bit_mismatches} M-vs-2M bit mismatches"),
    );
}

// ====================================================================
// 3. Power-flow conservation
// ====================================================================

fn island_imbalance(grid: &Grid, state: &GridState, r: &gridtac::powerflow::PowerFlowResult) -> f64 {
    let parts = islands(grid, state);
    let mut worst = 0.0f64;
    for island in 0..parts.groups.len() {
        let mut net = 0.0;
        for g in 0..grid.n_gen() {
            if let Some(b) = state.gen_bus[g].busbar() {
                let node = ElecNode { sub: grid.gen_sub(g), busbar: b };
                if parts.island_of(node) == Some(island) {
                    net += r.gen_p[g];
                }
            }
        }
        for l in 0..grid.n_load() {
            if let Some(b) = state.load_bus[l].busbar() {
                let node = ElecNode { sub: grid.load_sub(l), busbar: b };
                if parts.island_of(node) == Some(island) {
                    net -= r.load_p[l];
                }
            }
        }
        for l in 0..grid.n_line() {
            if let Some((a, _)) = state.line_nodes(grid, l) {
                if parts.island_of(a) == Some(island) {
                    net -= r.line_loss[l];
                }
            }
        }
        worst = worst.max(net.abs());
    }
    worst
}

#[test]
fn criterion_03_power_flow_conservation() {
    let (grid, _) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut solved = 0usize;
    let mut worst = 0.0f64;
    while solved < 1_000 {
        let mut state = GridState::default_topology(&grid);
        let mut random_bus = || match rng.gen_range(0..3) {
            0 => BusAssignment::Disconnected,
            1 => BusAssignment::Busbar1,
            _ => BusAssignment::Busbar2,
        };
        for g in 0..grid.n_gen() {
            state.gen_bus[g] = random_bus();
        }
        for l in 0..grid.n_load() {
            state.load_bus[l] = random_bus();
        }
        for l in 0..grid.n_line() {
            state.line_bus[l] = (random_bus(), random_bus());
        }
        let inj = Injections {
            gen_p: (0..grid.n_gen()).map(|_| rng.gen_range(0.0..30.0)).collect(),
            load_p: (0..grid.n_load()).map(|_| rng.gen_range(0.0..40.0)).collect(),
        };
        let r = solve(&grid, &state, &inj).unwrap();
        if r.diverged {
            continue;
        }
        worst = worst.max(island_imbalance(&grid, &state, &r));
        solved += 1;
    }

    // Hand-solved 3-bus case: one generator at a, a single 4.5 MW load
    // at b, equal 0.1 p.u. reactances, lossless. The reduced system
    // gives flows of 3, 1.5, and -1.5 MW.
    let sub = |s: &str| SubstationSpec { id: s.into() };
    let spec = GridSpec {
        substations: vec![sub("a"), sub("b"), sub("c")],
        generators: vec![GeneratorSpec {
            id: "g".into(),
            substation_id: "a".into(),
            p_min: 0.0,
            p_max: 100.0,
            max_ramp_up: 100.0,
            max_ramp_down: 100.0,
            min_uptime: 0,
            min_downtime: 0,
            cost_per_mw: 10.0,
            startup_cost: 0.0,
            shutdown_cost: 0.0,
            gen_type: GenType::Thermal,
        }],
        loads: vec![
            LoadSpec { id: "d1".into(), substation_id: "b".into() },
            LoadSpec { id: "d2".into(), substation_id: "c".into() },
        ],
        lines: vec![
            LineSpec {
                id: "lab".into(),
                from_substation_id: "a".into(),
                to_substation_id: "b".into(),
                reactance: 0.1,
                resistance: 0.0,
                thermal_limit: 10.0,
            },
            LineSpec {
                id: "lac".into(),
                from_substation_id: "a".into(),
                to_substation_id: "c".into(),
                reactance: 0.1,
                resistance: 0.0,
                thermal_limit: 10.0,
            },
            LineSpec {
                id: "lbc".into(),
                from_substation_id: "b".into(),
                to_substation_id: "c".into(),
                reactance: 0.1,
                resistance: 0.0,
                thermal_limit: 10.0,
            },
        ],
        slack_generator: "g".into(),
        base_power: 100.0,
    };
    let three_bus = Grid::new(spec).unwrap();
    let state = GridState::default_topology(&three_bus);
    let inj = Injections { gen_p: vec![4.5], load_p: vec![4.5, 0.0] };
    let r = solve(&three_bus, &state, &inj).unwrap();
    let hand = [3.0, 1.5, -1.5];
    let hand_dev = (0..3)
        .map(|l| (r.line_flow[l] - hand[l]).abs())
        .fold(0.0f64, f64::max);

    let ok = worst <= 1e-8 && hand_dev <= 1e-6;
    verdict(
        3,
        "power-flow conservation",
        ok,
        &format!("{solved} topologies, worst island imbalance {worst:.2e} MW, 3-bus hand case off by {hand_dev:.2e} MW"),
    );
}

// ====================================================================
// 4. GAE oracle
// ====================================================================

#[test]
fn criterion_04_gae_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..1_000 {
        let n = 10;
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.25)).collect();
        let bootstrap = rng.gen_range(-2.0..2.0);
        let gamma = rng.gen_range(0.1..1.0);
        let lambda = rng.gen_range(0.1..1.0);
        let (adv, _) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda);
        for t in 0..n {
            // Direct double sum: sum of (gamma * lambda)^l * delta_{t+l},
            // truncated at the first done.
            let mut acc = 0.0;
            let mut coef = 1.0;
            for u in t..n {
                let next_value = if dones[u] {
                    0.0
                } else if u + 1 < n {
                    values[u + 1]
                } else {
                    bootstrap
                };
                acc += coef * (rewards[u] + gamma * next_value - values[u]);
                if dones[u] {
                    break;
                }
                coef *= gamma * lambda;
            }
            worst = worst.max((adv[t] - acc).abs());
        }
    }
    let ok = worst <= 1e-10;
    verdict(
        4,
        "gae oracle",
        ok,
        &format!("1000 sequences, worst |recursive - double sum| = {worst:.2e}"),
    );
}

// ====================================================================
// 5. Gradient checks
// ====================================================================

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Random values kept away from zero so relu and clamp kinks stay out
/// of finite-difference reach.
fn randn_off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn check_all_primitives(rng: &mut ChaCha8Rng) {
    let a = randn(rng, 3, 4);
    let b = randn(rng, 4, 5);
    check_grads(&[a.clone(), b], |t, v| {
        let m = t.matmul(v[0], v[1]);
        t.sum_all(m)
    });

    let c = randn(rng, 3, 4);
    check_grads(&[a.clone(), c.clone()], |t, v| {
        let s = t.add(v[0], v[1]);
        t.sum_all(s)
    });
    check_grads(&[a.clone(), c.clone()], |t, v| {
        let s = t.sub(v[0], v[1]);
        t.mean_all(s)
    });
    check_grads(&[a.clone(), c.clone()], |t, v| {
        let s = t.mul(v[0], v[1]);
        t.sum_all(s)
    });

    let col = randn(rng, 3, 1);
    check_grads(&[a.clone(), col], |t, v| {
        let s = t.mul_col(v[0], v[1]);
        t.sum_all(s)
    });
    let row = randn(rng, 1, 4);
    check_grads(&[a.clone(), row], |t, v| {
        let s = t.add_row(v[0], v[1]);
        t.mean_all(s)
    });

    check_grads(&[a.clone()], |t, v| {
        let s = t.neg(v[0]);
        t.sum_all(s)
    });
    check_grads(&[a.clone()], |t, v| {
        let s = t.scale(v[0], -2.5);
        t.sum_all(s)
    });
    check_grads(&[a.clone()], |t, v| {
        let s = t.tanh(v[0]);
        t.sum_all(s)
    });
    let off = randn_off_zero(rng, 3, 4);
    check_grads(&[off.clone()], |t, v| {
        let s = t.relu(v[0]);
        t.sum_all(s)
    });
    check_grads(&[a.clone()], |t, v| {
        let s = t.exp(v[0]);
        t.sum_all(s)
    });
    let pos = Array2::from_shape_fn((3, 4), |_| rng.gen_range(0.2..2.0));
    check_grads(&[pos], |t, v| {
        let s = t.ln(v[0]);
        t.sum_all(s)
    });

    check_grads(&[a.clone()], |t, v| t.sum_all(v[0]));
    check_grads(&[a.clone()], |t, v| t.mean_all(v[0]));
    let w31 = randn(rng, 3, 1);
    check_grads(&[a.clone(), w31.clone()], |t, v| {
        let s = t.sum_cols(v[0]);
        let m = t.mul(s, v[1]);
        t.sum_all(m)
    });

    let w54 = randn(rng, 5, 4);
    check_grads(&[a.clone(), w54], |t, v| {
        let g = t.gather_rows(v[0], vec![2, 0, 0, 1, 2]);
        let m = t.mul(g, v[1]);
        t.sum_all(m)
    });
    check_grads(&[a.clone(), c.clone()], |t, v| {
        let s = t.concat_rows(v[0], v[1]);
        t.mean_all(s)
    });

    let seg = vec![0usize, 1, 1, 0, 2];
    let x54 = randn(rng, 5, 4);
    let w34 = randn(rng, 3, 4);
    check_grads(&[x54.clone(), w34.clone()], |t, v| {
        let s = t.segment_sum(v[0], seg.clone(), 3);
        let m = t.mul(s, v[1]);
        t.sum_all(m)
    });
    check_grads(&[x54.clone(), w34.clone()], |t, v| {
        let s = t.segment_mean(v[0], seg.clone(), 3);
        let m = t.mul(s, v[1]);
        t.sum_all(m)
    });
    let w51 = randn(rng, 5, 1);
    let x51 = randn(rng, 5, 1);
    check_grads_with_step(&[x51, w51], 1e-5, |t, v| {
        let s = t.segment_softmax(v[0], seg.clone(), 3);
        let m = t.mul(s, v[1]);
        t.sum_all(m)
    });

    // Clamp with bounds inside the data range, entries away from them.
    check_grads(&[randn_off_zero(rng, 3, 4)], |t, v| {
        let s = t.clamp(v[0], -0.55, 0.55);
        t.sum_all(s)
    });
    let m1 = randn(rng, 3, 4);
    let m2 = randn(rng, 3, 4);
    check_grads(&[m1, m2], |t, v| {
        let s = t.min_pair(v[0], v[1]);
        t.sum_all(s)
    });

    // Masked log-softmax with the chosen entries gathered out, so the
    // sentinel constant never enters the root.
    let logits = randn(rng, 2, 7);
    let segments = vec![(0usize, 3usize), (3, 4)];
    let mask = vec![
        true, false, true, true, true, false, true, //
        true, true, true, false, true, true, true,
    ];
    let choices = vec![0usize, 4, 2, 6];
    check_grads_with_step(&[logits], 1e-5, |t, v| {
        let lp = t.masked_log_softmax(v[0], segments.clone(), mask.clone());
        let picked = t.gather_sum_rows(lp, choices.clone(), 2);
        t.sum_all(picked)
    });

    // Plain gather_sum_rows on a raw leaf.
    check_grads(&[randn(rng, 2, 6)], |t, v| {
        let picked = t.gather_sum_rows(v[0], vec![1, 4, 0, 5], 2);
        t.mean_all(picked)
    });
}

#[test]
fn criterion_05_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    check_all_primitives(&mut rng);

    // Full masked-PPO loss: central differences on sampled parameter
    // coordinates of a real policy over a real observation batch.
    let (grid, chronics) = fixture();
    let policy = Policy::new(EncoderKind::Flat, &grid, 55);
    let layout = policy.layout().clone();

    let scenario = Scenario { chronic: 2, offset_days: 1, horizon: 200 };
    let mut observations = Vec::new();
    let mut masks_flat = Vec::new();
    let mut choice_cols = Vec::new();
    let mut old_logp = Vec::new();
    for k in 0..3 {
        let slice = chronics::slice(&chronics[2], &scenario).unwrap();
        let mut env = Env::new(&grid, slice, EnvConfig::default(), 9);
        for _ in 0..3 * k {
            env.step(&layout.do_nothing()).unwrap();
        }
        if k >= 1 {
            // Put a line element into cooldown so some batch rows carry
            // masked choices into the loss. Disconnecting the routinely
            // maintained line is safe on a calm chronic.
            let mut choices = layout.do_nothing();
            choices[5 + fixtures::MAINTAINED_LINE] = 0;
            let out = env.step(&choices).unwrap();
            assert_eq!(out.class, ActionClass::Legal);
            assert!(!out.terminated);
        }
        let obs = policy.observe(&grid, env.state(), env.result());
        let mask = env.mask();
        let batch = policy.collate(std::slice::from_ref(&obs));
        let (logits, _) = policy.forward_values(&batch);
        let row: Vec<f64> = logits.row(0).to_vec();
        let dist = MaskedCategoricalSet::from_logits(&layout, &row, &mask);
        let choices = dist.sample(&mut rng);
        // Offset the stored log-prob so the ratio sits near, but not at,
        // 1: inside the clip window and away from its kinks.
        old_logp.push(dist.log_prob(&choices) - 0.03);
        for (e, &c) in choices.iter().enumerate() {
            choice_cols.push(layout.offset(e) + c);
        }
        masks_flat.extend(mask);
        observations.push(obs);
    }
    let inputs = LossInputs {
        batch: policy.collate(&observations),
        choice_cols,
        masks: masks_flat,
        old_logp,
        advantages: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        td_targets: (0..3).map(|_| rng.gen_range(0.0..2.0)).collect(),
    };
    let cfg = PPOConfig::default();

    let mut policy = policy;
    let mut loss = ppo_loss(&policy, &inputs, &cfg).unwrap();
    loss.forward.tape.backward(loss.objective_neg);
    let grads = loss.forward.gradients();
    drop(loss);

    let shapes: Vec<(String, usize, usize)> = policy
        .params
        .iter()
        .map(|(n, v)| (n.to_string(), v.nrows(), v.ncols()))
        .collect();
    let h = 1e-5;
    let mut worst_rel = 0.0f64;
    let mut checked = 0usize;
    for trial in 0..60 {
        let pi = (trial * 7 + 3) % shapes.len();
        let (ref _name, rows, cols) = shapes[pi];
        let r = rng.gen_range(0..rows);
        let c = rng.gen_range(0..cols);
        let mut eval_at = |delta: f64| -> f64 {
            {
                let p = policy.params.values_mut().nth(pi).unwrap();
                p[(r, c)] += delta;
            }
            let loss = ppo_loss(&policy, &inputs, &cfg).unwrap();
            let v = loss.scalar(loss.objective_neg);
            let p = policy.params.values_mut().nth(pi).unwrap();
            p[(r, c)] -= delta;
            v
        };
        let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        let ad = grads[pi][(r, c)];
        let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-8);
        worst_rel = worst_rel.max(rel);
        checked += 1;
    }
    let ok = worst_rel < 1e-4;
    verdict(
        5,
        "gradient checks",
        ok,
        &format!("all primitives pass; PPO loss: {checked} sampled coordinates, worst rel err {worst_rel:.2e}"),
    );
}

// ====================================================================
// 6. Score anchors
// ====================================================================

#[test]
fn criterion_06_score_anchors() {
    let exact = l2rpn_score(1.0, 1.0).unwrap() == 0.0
        && l2rpn_score(0.2, 1.0).unwrap() == 100.0
        && l2rpn_score(0.6, 1.0).unwrap() == 50.0;
    // The do-nothing agent against itself is 0 for any positive cost.
    let mut self_zero = true;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..100 {
        let dn = rng.gen_range(1e-3..1e6);
        self_zero &= l2rpn_score(dn, dn).unwrap() == 0.0;
    }
    let ok = exact && self_zero;
    verdict(
        6,
        "score anchors",
        ok,
        "do-nothing -> 0, 80% saving -> 100, 40% saving -> 50, all exact",
    );
}

// ====================================================================
// 7. S2C oracle
// ====================================================================

#[test]
fn criterion_07_s2c_oracle() {
    use gridtac::metrics::EvalHistory;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut mismatches = 0usize;
    let mut never_completed = 0usize;
    for _ in 0..10_000 {
        let full = rng.gen_range(10..60usize);
        let n = rng.gen_range(1..15usize);
        let total = rng.gen_range(10_000..1_000_000usize);
        let all_partial = rng.gen_bool(0.15);
        let mut history = EvalHistory::new(total);
        let mut step = 0usize;
        let mut evals = Vec::new();
        for _ in 0..n {
            step += rng.gen_range(1..10_000usize);
            let tau = if all_partial || rng.gen_bool(0.4) {
                rng.gen_range(0..full)
            } else {
                full
            };
            history.record(9, full, step, tau);
            evals.push((step, tau));
        }
        // Brute force: walk backward from the end of the history and
        // keep the earliest step of the trailing full-length run.
        let mut oracle = total;
        for i in (0..evals.len()).rev() {
            if evals[i].1 == full {
                oracle = evals[i].0;
            } else {
                break;
            }
        }
        if oracle == total {
            never_completed += 1;
        }
        if history.s2c(9) != oracle {
            mismatches += 1;
        }
    }
    let ok = mismatches == 0 && never_completed > 1_000;
    verdict(
        7,
        "s2c oracle",
        ok,
        &format!("10000 histories ({never_completed} never complete), {mismatches} mismatches"),
    );
}

// ====================================================================
// 8. Scenario sampler uniformity
// ====================================================================

#[test]
fn criterion_08_sampler_uniformity() {
    let train = fixtures::train_chronics();
    assert_eq!(train.len(), 18);
    let cells = train.len() * OFFSET_DAYS;
    let draws = 90_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut counts = vec![0usize; cells];
    for _ in 0..draws {
        let s = sample_scenario(&mut rng, &train);
        assert_eq!(s.horizon, TRAIN_HORIZON);
        let pos = train.iter().position(|&c| c == s.chronic).unwrap();
        counts[pos * OFFSET_DAYS + s.offset_days] += 1;
    }
    let p = 1.0 / cells as f64;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    let worst = counts
        .iter()
        .map(|&c| (c as f64 - expected).abs())
        .fold(0.0f64, f64::max);
    let ok = worst <= 3.0 * sigma;
    verdict(
        8,
        "sampler uniformity",
        ok,
        &format!("90 cells x {draws} draws, worst deviation {worst:.1} vs 3 sigma = {:.1}", 3.0 * sigma),
    );
}

// ====================================================================
// 9. Desk-scale learning analogue
// ====================================================================

struct LearningGate<'a> {
    grid: &'a Grid,
    chronics: &'a [Chronic],
    score_cfg: ScoreConfig,
    dn_costs: BTreeMap<usize, f64>,
    passed_at: Option<usize>,
}

impl LearningGate<'_> {
    /// The criterion: chronic 17 completes full length and the mean
    /// held-out score beats do-nothing, both under deterministic
    /// evaluation without the opponent.
    fn check(&self, point: &EvalPoint, policy: &Policy) -> Option<f64> {
        let c17 = point
            .episodes
            .iter()
            .find(|e| e.chronic == 17 && !e.opponent)
            .expect("chronic 17 must be evaluated");
        if !c17.completed {
            return None;
        }
        let mut eval_cfg = EnvConfig::default();
        eval_cfg.opponent.enabled = false;
        let mut scores = Vec::new();
        for &cid in fixtures::TEST_CHRONICS.iter() {
            let scenario = Scenario {
                chronic: cid,
                offset_days: 0,
                horizon: self.chronics[cid].len(),
            };
            let trace = run_episode(
                self.grid,
                &self.chronics[cid],
                &scenario,
                eval_cfg.clone(),
                ppo::eval_opponent_seed(cid),
                &EpisodeAgent::Greedy(policy),
            )
            .unwrap();
            let cost = episode_cost(&trace, &self.chronics[cid], &self.score_cfg).unwrap();
            scores.push(l2rpn_score(cost, self.dn_costs[&cid]).unwrap());
        }
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

impl TrainSink for LearningGate<'_> {
    fn on_eval(&mut self, point: &EvalPoint, policy: &Policy) -> ControlFlow<()> {
        if let Some(mean_score) = self.check(point, policy) {
            if mean_score > 0.0 {
                self.passed_at = Some(point.step);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    }
}

#[test]
fn criterion_09_desk_scale_learning() {
    let start = Instant::now();
    let (grid, chronics) = fixture();
    let score_cfg = ScoreConfig::default();

    let mut eval_cfg = EnvConfig::default();
    eval_cfg.opponent.enabled = false;
    let mut dn_costs = BTreeMap::new();
    for &cid in fixtures::TEST_CHRONICS.iter() {
        let (_, cost) =
            do_nothing_baseline(&grid, &chronics[cid], eval_cfg.clone(), &score_cfg, 0).unwrap();
        dn_costs.insert(cid, cost);
    }

    let mut passes = 0usize;
    let mut details = Vec::new();
    for seed in 0..5u64 {
        let seed_start = Instant::now();
        let cfg = PPOConfig {
            total_steps: 500_000,
            seed,
            ..PPOConfig::default()
        };
        let mut trainer = Trainer::new(
            &grid,
            &chronics,
            fixtures::train_chronics(),
            fixtures::TEST_CHRONICS.to_vec(),
            EncoderKind::Flat,
            EnvConfig::default(),
            cfg,
        );
        let mut gate = LearningGate {
            grid: &grid,
            chronics: &chronics,
            score_cfg: score_cfg.clone(),
            dn_costs: dn_costs.clone(),
            passed_at: None,
        };
        let outcome = trainer.train(&mut gate);
        let took = seed_start.elapsed();
        match gate.passed_at {
            Some(step) => {
                passes += 1;
                details.push(format!("seed {seed}: pass at {step} steps in {took:.0?}"));
            }
            None => details.push(format!(
                "seed {seed}: fail after {} steps ({:?}) in {took:.0?}",
                outcome.env_steps, outcome.stop
            )),
        }
    }
    let elapsed = start.elapsed();
    let ok = passes >= 3 && elapsed <= Duration::from_secs(30 * 60);
    verdict(
        9,
        "desk-scale learning",
        ok,
        &format!("{passes}/5 seeds in {elapsed:.0?}; {}", details.join("; ")),
    );
}

// ====================================================================
// 10. Encoder parity smoke test
// ====================================================================

fn sub_graph_permuted(g: &SubGraphObs) -> SubGraphObs {
    let n = g.nodes.len();
    let perm: Vec<usize> = (0..n).rev().collect();
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut node_feat = Array2::zeros((n, SUB_NODE_FEAT));
    let mut nodes = vec![g.nodes[0]; n];
    for (new, &old) in perm.iter().enumerate() {
        node_feat.row_mut(new).assign(&g.node_feat.row(old));
        nodes[new] = g.nodes[old];
    }
    // Flip every edge while remapping; direction-sensitive features
    // (signed flow, angle-difference sine) change sign.
    let mut edges = Vec::new();
    let mut edge_feat = Array2::zeros((g.edges.len(), SUB_EDGE_FEAT));
    for (e, &(u, v)) in g.edges.iter().enumerate() {
        edges.push((inv[v], inv[u]));
        let mut f = g.edge_feat.row(e).to_owned();
        f[0] = -f[0];
        f[6] = -f[6];
        edge_feat.row_mut(e).assign(&f);
    }
    SubGraphObs { nodes, node_feat, edges, edge_feat }
}

fn elem_graph_permuted(g: &ElemGraphObs) -> ElemGraphObs {
    let ng = g.gen_feat.nrows();
    let nk = g.line_feat.nrows();
    let gen_perm: Vec<usize> = (0..ng).rev().collect();
    let line_perm: Vec<usize> = (0..nk).rev().collect();
    let mut gen_feat = Array2::zeros(g.gen_feat.dim());
    for (new, &old) in gen_perm.iter().enumerate() {
        gen_feat.row_mut(new).assign(&g.gen_feat.row(old));
    }
    let mut line_feat = Array2::zeros(g.line_feat.dim());
    for (new, &old) in line_perm.iter().enumerate() {
        line_feat.row_mut(new).assign(&g.line_feat.row(old));
    }
    let gen0 = g.gen_node(0);
    let line0 = g.line_node(0);
    let remap = |node: usize| -> usize {
        if node >= line0 {
            line0 + line_perm[node - line0]
        } else if node >= gen0 && node < gen0 + ng {
            gen0 + gen_perm[node - gen0]
        } else {
            node
        }
    };
    ElemGraphObs {
        n_sub: g.n_sub,
        bus_feat: g.bus_feat.clone(),
        gen_feat,
        load_feat: g.load_feat.clone(),
        line_feat,
        edges: g.edges.iter().map(|&(a, b)| (remap(a), remap(b))).collect(),
        edge_feat: g.edge_feat.clone(),
    }
}

#[test]
fn criterion_10_encoder_parity() {
    let (grid, chronics) = fixture();

    // Permutation invariance of both graph readouts on a mid-episode
    // state with a disconnected line.
    let scenario = Scenario { chronic: 3, offset_days: 0, horizon: 300 };
    let slice = chronics::slice(&chronics[3], &scenario).unwrap();
    let mut env = Env::new(&grid, slice, EnvConfig::default(), 5);
    let layout = env.layout().clone();
    for _ in 0..40 {
        env.step(&layout.do_nothing()).unwrap();
    }
    let mut worst_inv = 0.0f64;
    for kind in [EncoderKind::SubGraph, EncoderKind::ElemGraph] {
        let policy = Policy::new(kind, &grid, 10);
        let obs = policy.observe(&grid, env.state(), env.result());
        let (batch, batch_perm) = match obs {
            Observation::Sub(g) => {
                let p = sub_graph_permuted(&g);
                (collate_sub(std::slice::from_ref(&g)), collate_sub(&[p]))
            }
            Observation::Elem(g) => {
                let p = elem_graph_permuted(&g);
                (collate_elem(std::slice::from_ref(&g)), collate_elem(&[p]))
            }
            Observation::Flat(_) => unreachable!(),
        };
        let (l1, v1) = policy.forward_values(&batch);
        let (l2, v2) = policy.forward_values(&batch_perm);
        for c in 0..l1.ncols() {
            worst_inv = worst_inv.max((l1[(0, c)] - l2[(0, c)]).abs());
        }
        worst_inv = worst_inv.max((v1[(0, 0)] - v2[(0, 0)]).abs());
    }

    // Both graph encoders run the criterion-9 training loop, on a
    // reduced step budget, without divergence.
    let mut clean = true;
    let mut notes = Vec::new();
    for kind in [EncoderKind::ElemGraph, EncoderKind::SubGraph] {
        let cfg = PPOConfig {
            total_steps: 8_192,
            eval_every: 4_096,
            seed: 0,
            ..PPOConfig::default()
        };
        let mut trainer = Trainer::new(
            &grid,
            &chronics,
            fixtures::train_chronics(),
            fixtures::TEST_CHRONICS.to_vec(),
            kind,
            EnvConfig::default(),
            cfg,
        );
        let outcome = trainer.train(&mut NullSink);
        let finite = outcome
            .updates
            .iter()
            .all(|u| u.l_clip.is_finite() && u.l_vf.is_finite() && u.entropy.is_finite());
        let diverged = matches!(outcome.stop, StopReason::Diverged(_));
        clean &= finite && !diverged && outcome.env_steps >= 8_192;
        notes.push(format!(
            "{}: {} updates, stop {:?}",
            kind.name(),
            outcome.updates.len(),
            outcome.stop
        ));
    }

    let ok = worst_inv < 1e-10 && clean;
    verdict(
        10,
        "encoder parity",
        ok,
        &format!("readout permutation deviation {worst_inv:.2e}; {}", notes.join("; ")),
    );
}
