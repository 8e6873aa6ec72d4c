//! The run configuration: one TOML document covering paths, chronic id
//! lists, encoder choice, opponent switches, and the library configs.
//!
//! Flag overrides (`--seed`, `--out`, `--encoder`, `--opponent`) are
//! applied after the file loads, so a single config can drive a whole
//! experiment matrix.

use anyhow::{bail, Context, Result};
use gridtac::chronics::{self, Chronic};
use gridtac::env::EnvConfig;
use gridtac::fixtures;
use gridtac::grid::{Grid, GridSpec};
use gridtac::metrics::ScoreConfig;
use gridtac::nn::net::EncoderKind;
use gridtac::ppo::PPOConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Grid specification file (JSON).
    pub grid: PathBuf,
    /// Directory holding one `<id>/` subdirectory per chronic.
    pub chronics_dir: PathBuf,
    pub train_chronics: Vec<usize>,
    pub test_chronics: Vec<usize>,
    /// One of `flat`, `sub-graph`, `elem-graph`.
    pub encoder: String,
    /// Master seed; copied into `ppo.seed` when a run starts.
    pub seed: u64,
    /// Output directory for checkpoints, logs, traces, and reports.
    pub out: PathBuf,
    /// Whether training rollouts face the opponent.
    pub opponent_train: bool,
    /// Opponent modes `evaluate` runs: `both`, `on`, or `off`.
    pub opponent_eval: String,
    pub env: EnvConfig,
    pub ppo: PPOConfig,
    pub score: ScoreConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: "fixtures/case5.json".into(),
            chronics_dir: "fixtures/chronics".into(),
            train_chronics: fixtures::train_chronics(),
            test_chronics: fixtures::TEST_CHRONICS.to_vec(),
            encoder: "flat".into(),
            seed: 0,
            out: "runs/default".into(),
            opponent_train: false,
            opponent_eval: "both".into(),
            env: EnvConfig::default(),
            ppo: PPOConfig::default(),
            score: ScoreConfig::default(),
        }
    }
}

/// Flag overrides collected by the argument parser.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub encoder: Option<String>,
    pub opponent: Option<bool>,
}

impl RunConfig {
    /// Loads the file (or the defaults when no path is given), applies
    /// flag overrides, and checks the cheap invariants.
    pub fn resolve(path: Option<&Path>, over: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = over.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &over.out {
            cfg.out = out.clone();
        }
        if let Some(encoder) = &over.encoder {
            cfg.encoder = encoder.clone();
        }
        if let Some(opp) = over.opponent {
            cfg.opponent_train = opp;
            cfg.opponent_eval = if opp { "on" } else { "off" }.into();
        }
        cfg.ppo.seed = cfg.seed;
        cfg.encoder_kind()?;
        cfg.eval_modes()?;
        cfg.ppo.validate().map_err(anyhow::Error::msg)?;
        cfg.score.validate().map_err(anyhow::Error::msg)?;
        Ok(cfg)
    }

    pub fn encoder_kind(&self) -> Result<EncoderKind> {
        EncoderKind::from_name(&self.encoder).with_context(|| {
            format!(
                "unknown encoder '{}'; expected flat, sub-graph, or elem-graph",
                self.encoder
            )
        })
    }

    /// Opponent modes `evaluate` should run, in a fixed order.
    pub fn eval_modes(&self) -> Result<Vec<bool>> {
        match self.opponent_eval.as_str() {
            "both" => Ok(vec![false, true]),
            "on" => Ok(vec![true]),
            "off" => Ok(vec![false]),
            other => bail!("opponent_eval is '{other}'; expected both, on, or off"),
        }
    }

    /// Every chronic id the run references, sorted and deduplicated.
    pub fn chronic_ids(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .train_chronics
            .iter()
            .chain(self.test_chronics.iter())
            .copied()
            .collect();
        set.into_iter().collect()
    }

    /// Referenced paths must exist before a data-consuming command runs.
    pub fn ensure_paths(&self) -> Result<()> {
        if !self.grid.is_file() {
            bail!("grid file {} does not exist", self.grid.display());
        }
        if !self.chronics_dir.is_dir() {
            bail!(
                "chronics directory {} does not exist",
                self.chronics_dir.display()
            );
        }
        Ok(())
    }

    pub fn load_grid(&self) -> Result<Grid> {
        let text = std::fs::read_to_string(&self.grid)
            .with_context(|| format!("reading grid {}", self.grid.display()))?;
        let spec: GridSpec = serde_json::from_str(&text)
            .with_context(|| format!("parsing grid {}", self.grid.display()))?;
        Grid::new(spec).map_err(|report| {
            let lines: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            anyhow::anyhow!("grid {} is invalid:\n  {}", self.grid.display(), lines.join("\n  "))
        })
    }

    pub fn chronic_dir(&self, id: usize) -> PathBuf {
        self.chronics_dir.join(id.to_string())
    }

    pub fn load_chronic(&self, grid: &Grid, id: usize) -> Result<Chronic> {
        chronics::load_chronic(&self.chronic_dir(id), grid, id)
            .with_context(|| format!("chronic {id} in {}", self.chronics_dir.display()))
    }

    /// Loads chronics `0..=max(referenced id)` so the vector is indexable
    /// by chronic id, which is what the trainer and sampler expect. The
    /// directory therefore has to cover every id up to the largest one in
    /// the config lists.
    pub fn load_all_chronics(&self, grid: &Grid) -> Result<Vec<Chronic>> {
        let ids = self.chronic_ids();
        let max = match ids.last() {
            Some(&m) => m,
            None => bail!("no chronics configured"),
        };
        (0..=max).map(|id| self.load_chronic(grid, id)).collect()
    }
}
