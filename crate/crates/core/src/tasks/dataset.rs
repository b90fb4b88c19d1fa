//! JSONL instance dump/load.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{check_difficulty, TaskInstance, TaskKind, Vocab};
use crate::error::{Error, Result};

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub kind: TaskKind,
    pub difficulty: u8,
    pub prompt_ids: Vec<usize>,
    pub gold_ids: Vec<usize>,
    pub seed: u64,
}

impl InstanceRecord {
    pub fn new(inst: &TaskInstance, seed: u64) -> Self {
        InstanceRecord {
            kind: inst.kind,
            difficulty: inst.difficulty,
            prompt_ids: inst.prompt.clone(),
            gold_ids: inst.gold.clone(),
            seed,
        }
    }

    pub fn into_instance(self) -> Result<TaskInstance> {
        check_difficulty(self.difficulty)?;
        if self.prompt_ids.is_empty() {
            return Err(Error::Format("empty prompt".into()));
        }
        if let Some(&bad) = self.prompt_ids.iter().find(|&&t| t >= Vocab::SIZE) {
            return Err(Error::Format(format!("prompt token {bad} outside vocabulary")));
        }
        if self.gold_ids.is_empty() || !self.gold_ids.iter().all(|&t| Vocab::is_answer_token(t)) {
            return Err(Error::Format("gold must be nonempty answer tokens".into()));
        }
        Ok(TaskInstance {
            kind: self.kind,
            difficulty: self.difficulty,
            prompt: self.prompt_ids,
            gold: self.gold_ids,
        })
    }
}

pub fn parse_instance_line(line: &str) -> Result<(TaskInstance, u64)> {
    let rec: InstanceRecord = serde_json::from_str(line)?;
    let seed = rec.seed;
    Ok((rec.into_instance()?, seed))
}

pub fn dump_instances<W: Write>(mut w: W, items: &[(TaskInstance, u64)]) -> Result<()> {
    for (inst, seed) in items {
        serde_json::to_writer(&mut w, &InstanceRecord::new(inst, *seed))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads every nonblank line; errors name the offending line number.
pub fn load_instances<R: BufRead>(r: R) -> Result<Vec<(TaskInstance, u64)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            parse_instance_line(&line)
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
