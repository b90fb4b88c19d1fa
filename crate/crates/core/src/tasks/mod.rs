//! Synthetic verifiable-reward environments.
//!
//! Every instance is a prompt ending in `=` and a gold answer; the reward is
//! 1 exactly when the completion reproduces the gold tokens followed by the
//! end-of-answer token, and 0 otherwise.

mod dataset;
mod mix;
mod vocab;

pub use dataset::{dump_instances, load_instances, parse_instance_line, InstanceRecord};
pub use mix::{TaskMix, TaskSpec};
pub use vocab::{Token, Vocab};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numkit::Rng;

pub const MIN_DIFFICULTY: u8 = 1;
pub const MAX_DIFFICULTY: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ModAdd,
    MultiDigitAdd,
    Sort,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ModAdd, TaskKind::MultiDigitAdd, TaskKind::Sort];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ModAdd => "mod_add",
            TaskKind::MultiDigitAdd => "multi_digit_add",
            TaskKind::Sort => "sort",
        }
    }

    fn marker(self) -> Token {
        match self {
            TaskKind::ModAdd => Token::ModAddTask,
            TaskKind::MultiDigitAdd => Token::AddTask,
            TaskKind::Sort => Token::SortTask,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown task kind '{s}'")))
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub difficulty: u8,
    pub prompt: Vec<usize>,
    /// Answer tokens, without the end-of-answer terminator.
    pub gold: Vec<usize>,
}

fn check_difficulty(difficulty: u8) -> Result<()> {
    if !(MIN_DIFFICULTY..=MAX_DIFFICULTY).contains(&difficulty) {
        return Err(invalid(format!(
            "difficulty must be in {MIN_DIFFICULTY}..={MAX_DIFFICULTY}, got {difficulty}"
        )));
    }
    Ok(())
}

/// Uniform integer with exactly `digits` decimal digits (0..=9 for one digit).
fn operand(digits: u8, rng: &mut Rng) -> u64 {
    if digits == 1 {
        rng.range_inclusive(0, 9)
    } else {
        let lo = 10u64.pow(u32::from(digits) - 1);
        rng.range_inclusive(lo, 10 * lo - 1)
    }
}

/// Modulus range for a difficulty level: one-digit level uses 10, deeper
/// levels draw a modulus with as many digits as the operands.
pub fn modulus_range(difficulty: u8) -> (u64, u64) {
    if difficulty == 1 {
        (10, 10)
    } else {
        let lo = 10u64.pow(u32::from(difficulty) - 1);
        (lo + 1, 10 * lo)
    }
}

/// Prompt and gold for explicit operands; `gen_instance` draws them.
pub fn mod_add_instance(difficulty: u8, a: u64, b: u64, m: u64) -> TaskInstance {
    let mut prompt = vec![Token::Bos.id(), TaskKind::ModAdd.marker().id()];
    prompt.extend(Vocab::number(a));
    prompt.push(Token::Plus.id());
    prompt.extend(Vocab::number(b));
    prompt.push(Token::Mod.id());
    prompt.extend(Vocab::number(m));
    prompt.push(Token::Equals.id());
    TaskInstance {
        kind: TaskKind::ModAdd,
        difficulty,
        prompt,
        gold: Vocab::number((a + b) % m),
    }
}

pub fn add_instance(difficulty: u8, a: u64, b: u64) -> TaskInstance {
    let mut prompt = vec![Token::Bos.id(), TaskKind::MultiDigitAdd.marker().id()];
    prompt.extend(Vocab::number(a));
    prompt.push(Token::Plus.id());
    prompt.extend(Vocab::number(b));
    prompt.push(Token::Equals.id());
    TaskInstance {
        kind: TaskKind::MultiDigitAdd,
        difficulty,
        prompt,
        gold: Vocab::number(a + b),
    }
}

pub fn sort_instance(difficulty: u8, items: &[u8]) -> TaskInstance {
    let list = |xs: &[u8]| -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * xs.len());
        for (i, &x) in xs.iter().enumerate() {
            if i > 0 {
                out.push(Token::Comma.id());
            }
            out.push(Token::Digit(x).id());
        }
        out
    };
    let mut prompt = vec![Token::Bos.id(), TaskKind::Sort.marker().id()];
    prompt.extend(list(items));
    prompt.push(Token::Equals.id());
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    TaskInstance {
        kind: TaskKind::Sort,
        difficulty,
        prompt,
        gold: list(&sorted),
    }
}

/// Draws one instance. Difficulty sets operand digit count, or list length
/// `difficulty + 1` for sorting.
pub fn gen_instance(kind: TaskKind, difficulty: u8, rng: &mut Rng) -> Result<TaskInstance> {
    check_difficulty(difficulty)?;
    Ok(match kind {
        TaskKind::ModAdd => {
            let a = operand(difficulty, rng);
            let b = operand(difficulty, rng);
            let (lo, hi) = modulus_range(difficulty);
            let m = rng.range_inclusive(lo, hi);
            mod_add_instance(difficulty, a, b, m)
        }
        TaskKind::MultiDigitAdd => {
            let a = operand(difficulty, rng);
            let b = operand(difficulty, rng);
            add_instance(difficulty, a, b)
        }
        TaskKind::Sort => {
            let items: Vec<u8> = (0..=difficulty).map(|_| rng.range_inclusive(0, 9) as u8).collect();
            sort_instance(difficulty, &items)
        }
    })
}

/// The answer span: tokens before the first end-of-answer token, if any.
pub fn answer_span(completion: &[usize]) -> Option<&[usize]> {
    let eoa = Token::Eoa.id();
    completion.iter().position(|&t| t == eoa).map(|i| &completion[..i])
}

/// Binary exact-match reward.
pub fn verify(instance: &TaskInstance, completion: &[usize]) -> f64 {
    match answer_span(completion) {
        Some(span) if span == instance.gold.as_slice() => 1.0,
        _ => 0.0,
    }
}
