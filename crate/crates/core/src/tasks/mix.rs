//! Weighted mixture of `(kind, difficulty)` task sources.
//!
//! Textual form: comma-separated `kind:difficulty[:weight]` entries, e.g.
//! `mod_add:1` or `mod_add:1:2.0,sort:2:1.0`.

use serde::{Deserialize, Serialize};

use super::{check_difficulty, gen_instance, TaskInstance, TaskKind};
use crate::error::{invalid, Result};
use crate::numkit::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub difficulty: u8,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMix {
    pub entries: Vec<TaskSpec>,
}

impl TaskMix {
    pub fn single(kind: TaskKind, difficulty: u8) -> Self {
        TaskMix {
            entries: vec![TaskSpec {
                kind,
                difficulty,
                weight: 1.0,
            }],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let fields: Vec<&str> = part.split(':').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(invalid(format!("task entry '{part}' is not kind:difficulty[:weight]")));
            }
            let kind: TaskKind = fields[0].trim().parse()?;
            let difficulty: u8 = fields[1]
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad difficulty in '{part}'")))?;
            check_difficulty(difficulty)?;
            let weight: f64 = match fields.get(2) {
                Some(w) => w.trim().parse().map_err(|_| invalid(format!("bad weight in '{part}'")))?,
                None => 1.0,
            };
            if !(weight.is_finite() && weight > 0.0) {
                return Err(invalid(format!("weight must be positive in '{part}'")));
            }
            entries.push(TaskSpec {
                kind,
                difficulty,
                weight,
            });
        }
        if entries.is_empty() {
            return Err(invalid("empty task mix"));
        }
        Ok(TaskMix { entries })
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<TaskInstance> {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        let mut u = rng.uniform() * total;
        let mut pick = self.entries.last().expect("nonempty mix");
        for e in &self.entries {
            if u < e.weight {
                pick = e;
                break;
            }
            u -= e.weight;
        }
        gen_instance(pick.kind, pick.difficulty, rng)
    }
}

impl std::fmt::Display for TaskMix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|e| format!("{}:{}:{}", e.kind, e.difficulty, e.weight))
            .collect();
        f.write_str(&parts.join(","))
    }
}
