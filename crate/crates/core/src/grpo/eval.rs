//! Avg@k / Pass@k evaluation with per-difficulty temperature statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ModelParams;
use crate::numkit::Rng;
use crate::rollout::{self, PolicyMode, TempBounds, Trajectory};
use crate::tasks::{self, TaskInstance};

/// Produces `k` scored-or-unscored completions for an instance. Member `i`
/// must draw only from `rng.split(i)`.
pub trait GroupSampler: Sync {
    fn sample_group(&self, instance: &TaskInstance, k: usize, rng: &Rng) -> Result<Vec<Trajectory>>;
}

pub struct PolicySampler<'a> {
    pub params: &'a ModelParams,
    pub bounds: TempBounds,
    pub mode: PolicyMode,
}

impl GroupSampler for PolicySampler<'_> {
    fn sample_group(&self, instance: &TaskInstance, k: usize, rng: &Rng) -> Result<Vec<Trajectory>> {
        let base = rollout::prompt_trace(self.params, instance)?;
        (0..k)
            .map(|i| {
                let mut r = rng.split(i as u64);
                rollout::generate_from_prompt(self.params, base.clone(), &self.bounds, &self.mode, &mut r)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DifficultyStats {
    pub n_instances: usize,
    pub avg_at_k: f64,
    pub pass_at_k: f64,
    pub mean_tau: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub update: usize,
    pub k: usize,
    pub avg_at_k: f64,
    pub pass_at_k: f64,
    pub per_difficulty: BTreeMap<u8, DifficultyStats>,
}

impl EvalReport {
    pub fn csv_header() -> Vec<String> {
        let mut h = vec!["update".to_string(), "avg_at_k".into(), "pass_at_k".into()];
        for d in tasks::MIN_DIFFICULTY..=tasks::MAX_DIFFICULTY {
            h.push(format!("mean_tau_L{d}"));
        }
        h
    }

    /// Difficulties absent from the eval set leave their column empty.
    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.update.to_string(),
            self.avg_at_k.to_string(),
            self.pass_at_k.to_string(),
        ];
        for d in tasks::MIN_DIFFICULTY..=tasks::MAX_DIFFICULTY {
            r.push(
                self.per_difficulty
                    .get(&d)
                    .map_or_else(String::new, |s| s.mean_tau.to_string()),
            );
        }
        r
    }
}

struct InstanceResult {
    difficulty: u8,
    avg: f64,
    pass: f64,
    tau_sum: f64,
    n_steps: usize,
}

/// Samples `k` completions per instance; Avg@k is the mean reward and Pass@k
/// the indicator that any sample is correct, both averaged over instances.
pub fn evaluate<S: GroupSampler>(
    sampler: &S,
    instances: &[TaskInstance],
    k: usize,
    rng: &Rng,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    let results: Vec<InstanceResult> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let trajs = sampler.sample_group(inst, k, &rng.split(i as u64))?;
            let rewards: Vec<f64> = trajs.iter().map(|t| tasks::verify(inst, &t.completion())).collect();
            Ok(InstanceResult {
                difficulty: inst.difficulty,
                avg: rewards.iter().sum::<f64>() / k as f64,
                pass: if rewards.contains(&1.0) { 1.0 } else { 0.0 },
                tau_sum: trajs.iter().flat_map(|t| t.steps.iter()).map(|s| s.tau).sum(),
                n_steps: trajs.iter().map(|t| t.steps.len()).sum(),
            })
        })
        .collect::<Result<_>>()?;
    let mut report = EvalReport {
        k,
        ..Default::default()
    };
    if results.is_empty() {
        return Ok(report);
    }
    let mut acc: BTreeMap<u8, (usize, f64, f64, f64, usize)> = BTreeMap::new();
    for r in &results {
        report.avg_at_k += r.avg;
        report.pass_at_k += r.pass;
        let e = acc.entry(r.difficulty).or_default();
        e.0 += 1;
        e.1 += r.avg;
        e.2 += r.pass;
        e.3 += r.tau_sum;
        e.4 += r.n_steps;
    }
    report.avg_at_k /= results.len() as f64;
    report.pass_at_k /= results.len() as f64;
    for (d, (n, avg, pass, tau, steps)) in acc {
        report.per_difficulty.insert(
            d,
            DifficultyStats {
                n_instances: n,
                avg_at_k: avg / n as f64,
                pass_at_k: pass / n as f64,
                mean_tau: if steps > 0 { tau / steps as f64 } else { f64::NAN },
            },
        );
    }
    Ok(report)
}
