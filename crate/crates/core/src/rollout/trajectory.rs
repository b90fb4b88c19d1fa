use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{PolicyMode, TempBounds};
use crate::error::{Error, Result};
use crate::tasks::{TaskInstance, Vocab};

/// One decoding step as persisted for likelihood recomputation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub c: bool,
    /// Beta intensity; present iff `c`.
    pub z: Option<f64>,
    pub tau: f64,
    pub y: usize,
    pub logp_token_old: f64,
    pub logp_temp_old: f64,
}

impl TrajectoryStep {
    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Format(m.to_string()));
        match (self.c, self.z) {
            (true, Some(z)) if z > 0.0 && z < 1.0 => {}
            (true, _) => return fail("c = 1 step needs z in (0,1)"),
            (false, Some(_)) => return fail("c = 0 step must have z = null"),
            (false, None) => {}
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return fail("tau must be positive");
        }
        if self.y >= Vocab::SIZE {
            return fail("token outside vocabulary");
        }
        if !(self.logp_token_old.is_finite() && self.logp_temp_old.is_finite()) {
            return fail("log-probabilities must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Entropy of the sampling distribution at each step (nats).
    pub entropies: Vec<f64>,
    pub reward: f64,
}

impl Trajectory {
    pub fn completion(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.y).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Population standard deviation of the per-step temperatures.
    pub fn tau_std(&self) -> f64 {
        let n = self.steps.len() as f64;
        if self.steps.is_empty() {
            return 0.0;
        }
        let mean = self.steps.iter().map(|s| s.tau).sum::<f64>() / n;
        (self.steps.iter().map(|s| (s.tau - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// All trajectories sampled for one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupRollout {
    pub instance: TaskInstance,
    pub mode: PolicyMode,
    pub bounds: TempBounds,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    /// Filled by `grpo::advantages`.
    pub advantages: Option<Vec<f64>>,
}

impl GroupRollout {
    /// Full token sequence `[prompt, y_1..y_{T-1}]` whose positions produce
    /// every decision of trajectory `i`.
    pub fn decision_tokens(&self, i: usize) -> Vec<usize> {
        let traj = &self.trajectories[i];
        let mut toks = self.instance.prompt.clone();
        let n = traj.steps.len();
        toks.extend(traj.steps[..n.saturating_sub(1)].iter().map(|s| s.y));
        toks
    }
}

/// One line of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub prompt_ids: Vec<usize>,
    pub steps: Vec<TrajectoryStep>,
    pub reward: f64,
}

impl TrajectoryRecord {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_ids.iter().any(|&t| t >= Vocab::SIZE) {
            return Err(Error::Format("prompt token outside vocabulary".into()));
        }
        if self.reward != 0.0 && self.reward != 1.0 {
            return Err(Error::Format(format!("reward must be 0 or 1, got {}", self.reward)));
        }
        self.steps.iter().try_for_each(TrajectoryStep::validate)
    }
}

pub fn parse_trajectory_line(line: &str) -> Result<TrajectoryRecord> {
    let rec: TrajectoryRecord = serde_json::from_str(line)?;
    rec.validate()?;
    Ok(rec)
}

pub fn dump_trajectories<W: Write>(mut w: W, groups: &[GroupRollout]) -> Result<()> {
    for g in groups {
        for t in &g.trajectories {
            let rec = TrajectoryRecord {
                prompt_ids: g.instance.prompt.clone(),
                steps: t.steps.clone(),
                reward: t.reward,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn load_trajectories<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            parse_trajectory_line(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
