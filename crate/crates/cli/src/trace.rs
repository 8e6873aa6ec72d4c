//! Episode trace files: one JSON header line carrying the scenario and
//! summary, then one JSON record per step, exactly the fields the
//! environment reported. Rewards and flows round-trip losslessly, so a
//! replay can hold the file to bit-exact agreement.

use anyhow::{bail, Context, Result};
use gridtac::episode::{EpisodeTrace, TraceStep};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceHeader {
    pub kind: String,
    pub chronic: usize,
    pub offset_days: usize,
    pub horizon: usize,
    pub opponent: bool,
    pub opponent_seed: u64,
    pub survived: usize,
    pub completed: bool,
    pub reward_sum: f64,
}

#[derive(Clone, Debug)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
}

impl TraceFile {
    /// Rebuilds the trace the episode runner produced, for cost pricing.
    pub fn to_episode(&self) -> EpisodeTrace {
        EpisodeTrace {
            chronic: self.header.chronic,
            offset_days: self.header.offset_days,
            opponent: self.header.opponent,
            horizon: self.header.horizon,
            survived: self.header.survived,
            completed: self.header.completed,
            reward_sum: self.header.reward_sum,
            steps: self.steps.clone(),
        }
    }
}

pub fn write_trace(path: &Path, trace: &EpisodeTrace, opponent_seed: u64) -> Result<()> {
    let header = TraceHeader {
        kind: "header".into(),
        chronic: trace.chronic,
        offset_days: trace.offset_days,
        horizon: trace.horizon,
        opponent: trace.opponent,
        opponent_seed,
        survived: trace.survived,
        completed: trace.completed,
        reward_sum: trace.reward_sum,
    };
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for step in &trace.steps {
        writeln!(out, "{}", serde_json::to_string(step)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(line) => line?,
        None => bail!("{} is empty", path.display()),
    };
    let header: TraceHeader = serde_json::from_str(&first)
        .with_context(|| format!("{} line 1 is not a trace header", path.display()))?;
    if header.kind != "header" {
        bail!("{} line 1 is not a trace header", path.display());
    }
    let mut steps = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let step: TraceStep = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 2))?;
        steps.push(step);
    }
    Ok(TraceFile { header, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridtac::action::ActionClass;

    fn toy_trace() -> EpisodeTrace {
        EpisodeTrace {
            chronic: 3,
            offset_days: 1,
            opponent: true,
            horizon: 2,
            survived: 2,
            completed: true,
            reward_sum: 1.9375,
            steps: vec![
                TraceStep {
                    step: 0,
                    choices: vec![1; 13],
                    class: ActionClass::Legal,
                    reward: 0.9375,
                    rho: vec![0.25, 0.1 + 0.2, 27.374308131619706],
                    total_loss: 0.0625,
                    slack_p: 10.5,
                    terminated: false,
                    truncated: false,
                },
                TraceStep {
                    step: 1,
                    choices: vec![1; 13],
                    class: ActionClass::Legal,
                    reward: 1.0,
                    rho: vec![0.5, 0.75],
                    total_loss: 0.0,
                    slack_p: 9.0,
                    terminated: false,
                    truncated: true,
                },
            ],
        }
    }

    #[test]
    fn traces_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let trace = toy_trace();
        write_trace(&path, &trace, 77).unwrap();
        let read = read_trace(&path).unwrap();
        assert_eq!(read.header.opponent_seed, 77);
        let episode = read.to_episode();
        assert_eq!(episode.chronic, trace.chronic);
        assert_eq!(episode.reward_sum.to_bits(), trace.reward_sum.to_bits());
        assert_eq!(episode.steps.len(), 2);
        // 0.1 + 0.2 is not representable, and 27.374308131619706 is a value
        // the non-roundtrip JSON float parser reads back one ulp low; the
        // file must carry both exactly.
        assert_eq!(
            episode.steps[0].rho[1].to_bits(),
            trace.steps[0].rho[1].to_bits()
        );
        assert_eq!(
            episode.steps[0].rho[2].to_bits(),
            trace.steps[0].rho[2].to_bits()
        );
        assert_eq!(episode.steps[1].truncated, true);
    }

    #[test]
    fn missing_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"step\":0}\n").unwrap();
        assert!(read_trace(&path).is_err());
    }
}
