//! Command line front end for the grid operation testbed.
//!
//! One binary with file-based configuration: a TOML run config selects
//! the grid, the chronics, and all hyperparameters, and a handful of
//! global flags override the common fields. Exit codes: 0 success,
//! 1 validation or contract failure, 2 training divergence.

mod commands;
mod config;
mod trace;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gridtac", version, about = "Topological agent testbed for power grid operation")]
struct Cli {
    /// Run configuration file (TOML). Defaults cover the bundled fixtures.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Encoder override: flat, sub-graph, or elem-graph.
    #[arg(long, global = true)]
    encoder: Option<String>,

    /// Opponent override for both training and evaluation.
    #[arg(long, global = true, value_parser = ["on", "off"])]
    opponent: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the grid file and every referenced chronic, reporting violations.
    Validate,
    /// Solve one chronic step on the default topology and print the flow report.
    Powerflow {
        /// Chronic id.
        #[arg(long, default_value_t = 0)]
        chronic: usize,
        /// Row within the chronic.
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
    /// Print the encoder observation after a number of do-nothing steps.
    Observe {
        /// Chronic id.
        #[arg(long, default_value_t = 0)]
        chronic: usize,
        /// Number of do-nothing steps before observing.
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
    /// Write the bundled grid and synthetic chronics to disk.
    GenFixtures,
    /// Train a policy, logging updates and checkpoints to the output directory.
    Train {
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run the greedy policy over every configured chronic and write traces.
    Evaluate {
        /// Checkpoint file, or "do-nothing" for the baseline agent.
        #[arg(long)]
        checkpoint: String,
    },
    /// Score recorded traces against fresh do-nothing baselines.
    Score {
        /// Directory of .jsonl episode traces.
        #[arg(long)]
        traces: PathBuf,
        /// Training log for survival-to-completion; omit to use the step budget.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Re-run a recorded trace and verify it step by step.
    Replay {
        /// Episode trace file.
        #[arg(long)]
        trace: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Command::GenFixtures = cli.command {
        let out = cli.out.unwrap_or_else(|| PathBuf::from("fixtures"));
        let seed = cli.seed.unwrap_or(gridtac::fixtures::FIXTURE_SEED);
        return commands::cmd_gen_fixtures(&out, seed);
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        encoder: cli.encoder,
        opponent: cli.opponent.as_deref().map(|v| v == "on"),
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::GenFixtures => unreachable!("handled above"),
        Command::Validate => commands::cmd_validate(&cfg),
        Command::Powerflow { chronic, step } => commands::cmd_powerflow(&cfg, *chronic, *step),
        Command::Observe { chronic, step } => commands::cmd_observe(&cfg, *chronic, *step),
        Command::Train { resume } => commands::cmd_train(&cfg, *resume),
        Command::Evaluate { checkpoint } => commands::cmd_evaluate(&cfg, checkpoint),
        Command::Score { traces, log } => commands::cmd_score(&cfg, traces, log.as_deref()),
        Command::Replay { trace } => commands::cmd_replay(&cfg, trace),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
