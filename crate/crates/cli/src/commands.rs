//! Subcommand implementations.
//!
//! Every command is deterministic for a fixed config and seed. Exit
//! codes follow one convention: 0 success, 1 validation or contract
//! failure, 2 training divergence.

use crate::config::RunConfig;
use crate::trace::{self, TraceFile};
use anyhow::{bail, Context, Result};
use gridtac::chronics::{self, Chronic, Scenario};
use gridtac::env::Env;
use gridtac::episode::{run_episode, EpisodeAgent};
use gridtac::fixtures;
use gridtac::grid::{islands, Busbar, GridState};
use gridtac::metrics::{
    do_nothing_baseline, episode_cost, l2rpn_score, summarize, write_report_csv, ChronicReport,
    EvalHistory,
};
use gridtac::nn::checkpoint::{self, CheckpointError};
use gridtac::nn::net::{Observation, Policy};
use gridtac::powerflow::{solve, Injections};
use gridtac::ppo::{eval_opponent_seed, EvalPoint, StopReason, TrainSink, Trainer, UpdateRecord};
use ndarray::Array2;
use serde::Deserialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

// ====================================================================
// validate
// ====================================================================

pub fn cmd_validate(cfg: &RunConfig) -> Result<ExitCode> {
    let mut clean = true;
    match cfg.ensure_paths().and_then(|_| cfg.load_grid()) {
        Ok(grid) => {
            let spec = grid.spec();
            println!(
                "grid {}: ok ({} substations, {} generators, {} loads, {} lines)",
                cfg.grid.display(),
                spec.substations.len(),
                spec.generators.len(),
                spec.loads.len(),
                spec.lines.len()
            );
            for id in cfg.chronic_ids() {
                match cfg.load_chronic(&grid, id) {
                    Ok(c) => println!("chronic {id}: ok ({} steps)", c.len()),
                    Err(e) => {
                        clean = false;
                        println!("chronic {id}: {e:#}");
                    }
                }
            }
        }
        Err(e) => {
            clean = false;
            println!("{e:#}");
        }
    }
    if clean {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

// ====================================================================
// powerflow
// ====================================================================

pub fn cmd_powerflow(cfg: &RunConfig, chronic_id: usize, step: usize) -> Result<ExitCode> {
    cfg.ensure_paths()?;
    let grid = cfg.load_grid()?;
    let chronic = cfg.load_chronic(&grid, chronic_id)?;
    if step >= chronic.len() {
        bail!("step {step} is out of range; chronic {chronic_id} has {} steps", chronic.len());
    }
    let state = GridState::default_topology(&grid);
    let inj = Injections {
        gen_p: chronic.gen_p.row(step).to_vec(),
        load_p: chronic.load_p.row(step).to_vec(),
    };
    let result = solve(&grid, &state, &inj).map_err(anyhow::Error::msg)?;
    let spec = grid.spec();

    println!("chronic {chronic_id} step {step}, default topology");
    println!("{:<10} {:>12} {:>8} {:>12}", "line", "flow MW", "rho", "loss MW");
    for (l, line) in spec.lines.iter().enumerate() {
        println!(
            "{:<10} {:>12.4} {:>8.4} {:>12.6}",
            line.id, result.line_flow[l], result.rho[l], result.line_loss[l]
        );
    }
    println!("{:<10} {:>12} {:>12}", "generator", "p MW", "");
    for (g, gen) in spec.generators.iter().enumerate() {
        println!("{:<10} {:>12.4}", gen.id, result.gen_p[g]);
    }
    let total_gen: f64 = result.gen_p.iter().sum();
    let total_load: f64 = result.load_p.iter().sum();
    let n_islands = islands(&grid, &state).groups.len();
    println!(
        "generation {:.4} MW, load {:.4} MW, losses {:.6} MW, slack {:.4} MW",
        total_gen, total_load, result.total_loss, result.slack_p
    );
    let unserved = if result.unserved.is_empty() {
        "none".to_string()
    } else {
        result
            .unserved
            .iter()
            .map(|&d| spec.loads[d].id.clone())
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!(
        "islands {}, unserved loads {}, diverged {}",
        n_islands, unserved, result.diverged
    );
    Ok(ExitCode::SUCCESS)
}

// ====================================================================
// observe
// ====================================================================

fn matrix_json(a: &Array2<f64>) -> serde_json::Value {
    json!(a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn observation_json(obs: &Observation) -> serde_json::Value {
    match obs {
        Observation::Flat(v) => json!({
            "encoder": "flat",
            "values": v.to_vec(),
        }),
        Observation::Sub(g) => json!({
            "encoder": "sub-graph",
            "nodes": g
                .nodes
                .iter()
                .map(|n| json!({"sub": n.sub, "busbar": match n.busbar { Busbar::B1 => 1, Busbar::B2 => 2 }}))
                .collect::<Vec<_>>(),
            "node_feat": matrix_json(&g.node_feat),
            "edges": g.edges.iter().map(|&(u, v)| vec![u, v]).collect::<Vec<_>>(),
            "edge_feat": matrix_json(&g.edge_feat),
        }),
        Observation::Elem(g) => json!({
            "encoder": "elem-graph",
            "n_sub": g.n_sub,
            "bus_feat": matrix_json(&g.bus_feat),
            "gen_feat": matrix_json(&g.gen_feat),
            "load_feat": matrix_json(&g.load_feat),
            "line_feat": matrix_json(&g.line_feat),
            "edges": g.edges.iter().map(|&(u, v)| vec![u, v]).collect::<Vec<_>>(),
            "edge_feat": matrix_json(&g.edge_feat),
        }),
    }
}

pub fn cmd_observe(cfg: &RunConfig, chronic_id: usize, step: usize) -> Result<ExitCode> {
    let kind = cfg.encoder_kind()?;
    cfg.ensure_paths()?;
    let grid = cfg.load_grid()?;
    let chronic = cfg.load_chronic(&grid, chronic_id)?;
    let scenario = Scenario {
        chronic: chronic_id,
        offset_days: 0,
        horizon: chronic.len(),
    };
    let slice = chronics::slice(&chronic, &scenario).map_err(anyhow::Error::msg)?;
    let mut env = Env::new(&grid, slice, cfg.env.clone(), cfg.seed);
    let do_nothing = env.layout().do_nothing();
    for t in 0..step {
        if env.done() {
            bail!("the do-nothing episode ended after {t} steps, before step {step}");
        }
        env.step(&do_nothing).map_err(anyhow::Error::msg)?;
    }
    let policy = Policy::new(kind, &grid, cfg.seed);
    let obs = policy.observe(&grid, env.state(), env.result());
    let mut value = observation_json(&obs);
    value["chronic"] = json!(chronic_id);
    value["step"] = json!(step);
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(ExitCode::SUCCESS)
}

// ====================================================================
// gen-fixtures
// ====================================================================

pub fn cmd_gen_fixtures(out: &Path, seed: u64) -> Result<ExitCode> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let spec = fixtures::case5();
    let grid_path = out.join("case5.json");
    let mut text = serde_json::to_string_pretty(&spec)?;
    text.push('\n');
    fs::write(&grid_path, text).with_context(|| format!("writing {}", grid_path.display()))?;

    let grid = fixtures::case5_grid();
    let chronics = fixtures::synth_chronics(&grid, seed);
    for chronic in &chronics {
        let dir = out.join("chronics").join(chronic.id.to_string());
        chronics::save_chronic(&dir, &grid, chronic)
            .with_context(|| format!("writing chronic {}", chronic.id))?;
    }
    println!(
        "wrote case5.json and {} chronics to {} (seed {seed})",
        chronics.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ====================================================================
// train
// ====================================================================

#[derive(Deserialize)]
struct Latest {
    step: usize,
    checkpoint: String,
}

struct RunSink<'a> {
    out_dir: &'a Path,
    log: BufWriter<File>,
    failure: Option<anyhow::Error>,
}

impl RunSink<'_> {
    fn try_update(&mut self, record: &UpdateRecord) -> Result<()> {
        let mut value = serde_json::to_value(record)?;
        value["kind"] = json!("update");
        writeln!(self.log, "{value}")?;
        Ok(())
    }

    fn try_eval(&mut self, point: &EvalPoint, policy: &Policy) -> Result<()> {
        let mut parts = Vec::new();
        for episode in &point.episodes {
            let mut value = serde_json::to_value(episode)?;
            value["kind"] = json!("eval");
            writeln!(self.log, "{value}")?;
            parts.push(format!(
                "c{}{} {}{}",
                episode.chronic,
                if episode.opponent { "+opp" } else { "" },
                episode.episode_len,
                if episode.completed { " full" } else { "" }
            ));
        }
        self.log.flush()?;
        let name = format!("ckpt_{:08}.bin", point.step);
        checkpoint::save(policy, &self.out_dir.join(&name))?;
        let latest = json!({ "step": point.step, "checkpoint": name });
        fs::write(self.out_dir.join("latest.json"), format!("{latest}\n"))?;
        println!("eval @ {:>8}: {}", point.step, parts.join("  "));
        Ok(())
    }
}

impl TrainSink for RunSink<'_> {
    fn on_update(&mut self, record: &UpdateRecord) {
        if self.failure.is_none() {
            if let Err(e) = self.try_update(record) {
                self.failure = Some(e);
            }
        }
    }

    fn on_eval(&mut self, point: &EvalPoint, policy: &Policy) -> ControlFlow<()> {
        if self.failure.is_none() {
            if let Err(e) = self.try_eval(point, policy) {
                self.failure = Some(e);
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    }
}

pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<ExitCode> {
    let kind = cfg.encoder_kind()?;
    let reserved: Vec<usize> = cfg
        .train_chronics
        .iter()
        .copied()
        .filter(|id| cfg.test_chronics.contains(id))
        .collect();
    if !reserved.is_empty() {
        bail!(
            "chronics {reserved:?} are reserved for testing and cannot appear in train_chronics"
        );
    }
    cfg.ensure_paths()?;
    let grid = cfg.load_grid()?;
    let chronics = cfg.load_all_chronics(&grid)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;

    let mut env_cfg = cfg.env.clone();
    env_cfg.opponent.enabled = cfg.opponent_train;
    let mut trainer = Trainer::new(
        &grid,
        &chronics,
        cfg.train_chronics.clone(),
        cfg.test_chronics.clone(),
        kind,
        env_cfg,
        cfg.ppo.clone(),
    );

    if resume {
        let latest_path = cfg.out.join("latest.json");
        let text = fs::read_to_string(&latest_path)
            .with_context(|| format!("nothing to resume: {} not readable", latest_path.display()))?;
        let latest: Latest = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", latest_path.display()))?;
        let ckpt = cfg.out.join(&latest.checkpoint);
        checkpoint::load_into(&mut trainer.policy, &ckpt)
            .with_context(|| format!("loading {}", ckpt.display()))?;
        trainer.resume_at(latest.step);
        println!(
            "resuming from {} at {} env steps (optimizer moments restart)",
            latest.checkpoint, latest.step
        );
    }

    let log_path = cfg.out.join("train.jsonl");
    let log_file = if resume {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut sink = RunSink {
        out_dir: &cfg.out,
        log: BufWriter::new(log_file),
        failure: None,
    };

    println!(
        "training {} encoder, seed {}, {} env steps, opponent {}",
        cfg.encoder,
        cfg.seed,
        cfg.ppo.total_steps,
        if cfg.opponent_train { "on" } else { "off" }
    );
    let outcome = trainer.train(&mut sink);
    if let Some(e) = sink.failure {
        return Err(e.context("writing training artifacts"));
    }
    println!(
        "done: {} env steps, {} updates, stop {:?}",
        outcome.env_steps,
        outcome.updates.len(),
        outcome.stop
    );
    if let StopReason::Diverged(msg) = &outcome.stop {
        eprintln!(
            "training diverged: {msg}; the checkpoints in {} are from before the failed update",
            cfg.out.display()
        );
        return Ok(ExitCode::from(2));
    }

    checkpoint::save(&trainer.policy, &cfg.out.join("final.bin"))?;
    let latest = json!({ "step": outcome.env_steps, "checkpoint": "final.bin" });
    fs::write(cfg.out.join("latest.json"), format!("{latest}\n"))?;
    Ok(ExitCode::SUCCESS)
}

// ====================================================================
// evaluate
// ====================================================================

/// The pseudo-checkpoint name selecting the baseline agent.
pub const DO_NOTHING: &str = "do-nothing";

fn mode_name(opponent: bool) -> &'static str {
    if opponent {
        "on"
    } else {
        "off"
    }
}

pub fn trace_path(out: &Path, chronic: usize, opponent: bool) -> PathBuf {
    out.join("traces")
        .join(format!("chronic_{chronic:02}_opponent_{}.jsonl", mode_name(opponent)))
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint_arg: &str) -> Result<ExitCode> {
    let kind = cfg.encoder_kind()?;
    cfg.ensure_paths()?;
    let grid = cfg.load_grid()?;
    let modes = cfg.eval_modes()?;

    let policy = if checkpoint_arg == DO_NOTHING {
        None
    } else {
        let mut policy = Policy::new(kind, &grid, cfg.seed);
        match checkpoint::load_into(&mut policy, Path::new(checkpoint_arg)) {
            Ok(()) => Some(policy),
            Err(e @ CheckpointError::SchemaMismatch { .. }) => {
                bail!("checkpoint {checkpoint_arg} does not match this config: {e}")
            }
            Err(e) => return Err(e).context(format!("loading {checkpoint_arg}")),
        }
    };
    let agent = match &policy {
        Some(p) => EpisodeAgent::Greedy(p),
        None => EpisodeAgent::DoNothing,
    };

    let traces_dir = cfg.out.join("traces");
    fs::create_dir_all(&traces_dir)
        .with_context(|| format!("creating {}", traces_dir.display()))?;
    println!("{:<8} {:<9} {:>10} {:>14}", "chronic", "opponent", "length", "reward sum");
    let mut written = 0;
    for cid in cfg.chronic_ids() {
        let chronic = cfg.load_chronic(&grid, cid)?;
        for &opponent in &modes {
            let scenario = Scenario {
                chronic: cid,
                offset_days: 0,
                horizon: chronic.len(),
            };
            let mut env_cfg = cfg.env.clone();
            env_cfg.opponent.enabled = opponent;
            let seed = eval_opponent_seed(cid);
            let trace = run_episode(&grid, &chronic, &scenario, env_cfg, seed, &agent)
                .map_err(anyhow::Error::msg)?;
            println!(
                "{:<8} {:<9} {:>6}/{:<4} {:>14.4}",
                cid,
                mode_name(opponent),
                trace.survived,
                trace.horizon,
                trace.reward_sum
            );
            trace::write_trace(&trace_path(&cfg.out, cid, opponent), &trace, seed)?;
            written += 1;
        }
    }
    println!("wrote {written} traces to {}", traces_dir.display());
    Ok(ExitCode::SUCCESS)
}

// ====================================================================
// score
// ====================================================================

/// Per-(chronic, opponent) survival sequences parsed from a training log.
type EvalRows = BTreeMap<(usize, bool), Vec<(usize, usize)>>;

fn parse_training_log(path: &Path) -> Result<EvalRows> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: EvalRows = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if value["kind"] != "eval" {
            continue;
        }
        let field = |name: &str| -> Result<u64> {
            value[name]
                .as_u64()
                .with_context(|| format!("{} line {}: bad '{name}'", path.display(), i + 1))
        };
        let key = (
            field("chronic")? as usize,
            value["opponent"].as_bool().unwrap_or(false),
        );
        rows.entry(key)
            .or_default()
            .push((field("step")? as usize, field("episode_len")? as usize));
    }
    Ok(rows)
}

fn s2c_from_log(
    rows: &EvalRows,
    chronic: &Chronic,
    opponent: bool,
    total_steps: usize,
) -> Result<usize> {
    let seq = match rows.get(&(chronic.id, opponent)) {
        Some(seq) => seq,
        None => return Ok(total_steps),
    };
    let mut history = EvalHistory::new(total_steps);
    for &(step, tau) in seq {
        history.record(chronic.id, chronic.len(), step, tau);
    }
    Ok(history.s2c(chronic.id))
}

pub fn cmd_score(cfg: &RunConfig, traces_dir: &Path, log: Option<&Path>) -> Result<ExitCode> {
    cfg.ensure_paths()?;
    let grid = cfg.load_grid()?;
    let mut files: Vec<PathBuf> = fs::read_dir(traces_dir)
        .with_context(|| format!("reading {}", traces_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .jsonl traces in {}", traces_dir.display());
    }
    let log_rows = match log {
        Some(path) => Some(parse_training_log(path)?),
        None => None,
    };

    let mut by_mode: BTreeMap<bool, Vec<ChronicReport>> = BTreeMap::new();
    for file in &files {
        let tf: TraceFile = trace::read_trace(file)?;
        let chronic = cfg.load_chronic(&grid, tf.header.chronic)?;
        let mut env_cfg = cfg.env.clone();
        env_cfg.opponent.enabled = tf.header.opponent;
        let (_, cost_do_nothing) = do_nothing_baseline(
            &grid,
            &chronic,
            env_cfg,
            &cfg.score,
            tf.header.opponent_seed,
        )
        .map_err(anyhow::Error::msg)?;
        let cost_agent = episode_cost(&tf.to_episode(), &chronic, &cfg.score)
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("pricing {}", file.display()))?;
        let score = l2rpn_score(cost_agent, cost_do_nothing).map_err(anyhow::Error::msg)?;
        let s2c = match &log_rows {
            Some(rows) => s2c_from_log(rows, &chronic, tf.header.opponent, cfg.ppo.total_steps)?,
            None => cfg.ppo.total_steps,
        };
        by_mode.entry(tf.header.opponent).or_default().push(ChronicReport {
            chronic: tf.header.chronic,
            s2c,
            cost_do_nothing,
            cost_agent,
            score,
        });
    }
    if log_rows.is_none() {
        println!(
            "no training log given; survival-to-completion falls back to the {} step budget",
            cfg.ppo.total_steps
        );
    }

    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    for (opponent, rows) in &by_mode {
        let name = format!("score_opponent_{}.csv", mode_name(*opponent));
        let path = cfg.out.join(&name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_report_csv(rows, file)?;
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let s2cs: Vec<f64> = rows.iter().map(|r| r.s2c as f64).collect();
        let score_summary = summarize(&scores);
        let s2c_summary = summarize(&s2cs);
        println!(
            "opponent {}: {} chronics, score {:.3} +- {:.3}, s2c {:.0} +- {:.0}, wrote {}",
            mode_name(*opponent),
            rows.len(),
            score_summary.mean,
            score_summary.std,
            s2c_summary.mean,
            s2c_summary.std,
            path.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ====================================================================
// replay
// ====================================================================

pub fn cmd_replay(cfg: &RunConfig, trace_file: &Path) -> Result<ExitCode> {
    cfg.ensure_paths()?;
    let grid = cfg.load_grid()?;
    let tf = trace::read_trace(trace_file)?;
    let chronic = cfg.load_chronic(&grid, tf.header.chronic)?;
    let scenario = Scenario {
        chronic: tf.header.chronic,
        offset_days: tf.header.offset_days,
        horizon: tf.header.horizon,
    };
    let slice = chronics::slice(&chronic, &scenario).map_err(anyhow::Error::msg)?;
    let mut env_cfg = cfg.env.clone();
    env_cfg.opponent.enabled = tf.header.opponent;
    let mut env = Env::new(&grid, slice, env_cfg, tf.header.opponent_seed);

    for record in &tf.steps {
        if env.done() {
            println!(
                "mismatch at step {}: the episode already ended, the trace has more steps",
                record.step
            );
            return Ok(ExitCode::from(1));
        }
        let out = match env.step(&record.choices) {
            Ok(out) => out,
            Err(e) => {
                println!("mismatch at step {}: replay refused the recorded action: {e}", record.step);
                return Ok(ExitCode::from(1));
            }
        };
        let mut bad: Vec<String> = Vec::new();
        if out.class != record.class {
            bad.push(format!("class {:?} != {:?}", out.class, record.class));
        }
        if out.reward != record.reward {
            bad.push(format!("reward {} != {}", out.reward, record.reward));
        }
        if out.result.rho != record.rho {
            bad.push("rho vector differs".into());
        }
        if out.result.total_loss != record.total_loss {
            bad.push(format!("total_loss {} != {}", out.result.total_loss, record.total_loss));
        }
        if out.result.slack_p != record.slack_p {
            bad.push(format!("slack_p {} != {}", out.result.slack_p, record.slack_p));
        }
        if out.terminated != record.terminated || out.truncated != record.truncated {
            bad.push("terminal flags differ".into());
        }
        if !bad.is_empty() {
            println!("mismatch at step {}: {}", record.step, bad.join("; "));
            return Ok(ExitCode::from(1));
        }
    }
    if !env.done() {
        println!(
            "mismatch: the trace ends after {} steps but the episode is still running",
            tf.steps.len()
        );
        return Ok(ExitCode::from(1));
    }
    println!(
        "replay ok: chronic {}, {} steps verified, reward sum {:.6}",
        tf.header.chronic,
        tf.steps.len(),
        tf.header.reward_sum
    );
    Ok(ExitCode::SUCCESS)
}
