//! Outer training loop: rollout a batch, normalize rewards per group, then
//! one coordinate-ascent step (token parameters first, head second).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    attach_advantages, evaluate, temp_objective, token_objective, CoordinateOptimizer, EvalReport,
    LossReport, PolicySampler, TrainConfig,
};
use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams, ParamSet};
use crate::numkit::Rng;
use crate::rollout::{generate_group, GroupRollout, PolicyMode, TempBounds};
use crate::tasks::{TaskInstance, TaskMix};

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub tasks: TaskMix,
    pub bounds: TempBounds,
    pub mode: PolicyMode,
    pub seed: u64,
    pub n_updates: usize,
    /// Evaluate every this many updates (0 disables evaluation).
    pub eval_every: usize,
    pub eval_k: usize,
    pub eval_instances: usize,
}

// Root-seed substreams.
const STREAM_INIT: u64 = 0;
const STREAM_ROLLOUT: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_EVAL_SET: u64 = 3;

/// Moving-average weight for the response length fed to the annealing schedule.
const LEN_EMA: f64 = 0.9;

/// Applies one coordinate-ascent step to `params` using cached rollouts.
/// The head step sees the token parameters produced by the first step.
pub fn coordinate_step(
    params: &mut ModelParams,
    opt: &mut CoordinateOptimizer,
    batch: &[GroupRollout],
    cfg: &TrainConfig,
    update: usize,
) -> Result<LossReport> {
    let mut report = LossReport::from_rollouts(update, batch);
    let uses_head = batch.iter().any(|g| g.mode.uses_head());
    let abort = |report: &LossReport, reason: &str| Error::Abort {
        update,
        reason: reason.to_string(),
        report: Box::new(report.clone()),
    };
    // Numeric failures past validation mean the policy diverged.
    let diverged = |report: &LossReport, e: Error| match e {
        Error::Domain(m) => abort(report, &m),
        e => e,
    };
    for epoch in 0..cfg.inner_epochs {
        let tok = token_objective(params, batch, cfg).map_err(|e| diverged(&report, e))?;
        if epoch == 0 {
            report.token_loss = -tok.value;
            report.grad_norm_theta = tok.grads.norm(ParamSet::Theta);
        }
        if !(tok.value.is_finite() && tok.grads.is_finite()) {
            return Err(abort(&report, "non-finite token objective"));
        }
        opt.theta.ascend(params, &tok.grads);

        if uses_head {
            let tmp = temp_objective(params, batch, cfg).map_err(|e| diverged(&report, e))?;
            if epoch == 0 {
                report.temp_loss = -tmp.value;
                report.grad_norm_phi = tmp.grads.norm(ParamSet::Phi);
            }
            if !(tmp.value.is_finite() && tmp.grads.is_finite()) {
                return Err(abort(&report, "non-finite temperature objective"));
            }
            opt.phi.ascend(params, &tmp.grads);
        }
        if !params.is_finite() {
            return Err(abort(&report, "non-finite parameters after update"));
        }
    }
    Ok(report)
}

pub enum TrainEvent<'a> {
    Update {
        report: &'a LossReport,
        batch: &'a [GroupRollout],
    },
    Eval(&'a EvalReport),
}

pub struct Trainer {
    pub setup: TrainSetup,
    pub params: ModelParams,
    pub opt: CoordinateOptimizer,
    pub eval_set: Vec<TaskInstance>,
    mode: PolicyMode,
    root: Rng,
    update: usize,
    len_avg: Option<f64>,
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self> {
        setup.train.validate()?;
        setup.model.validate()?;
        setup.bounds.validate()?;
        let root = Rng::new(setup.seed);
        let init_seed = rand::RngCore::next_u64(&mut root.split(STREAM_INIT));
        let params = init_params(&setup.model, init_seed)?;
        let mut set_rng = root.split(STREAM_EVAL_SET);
        let eval_set = (0..setup.eval_instances)
            .map(|_| setup.tasks.sample(&mut set_rng))
            .collect::<Result<_>>()?;
        Ok(Trainer {
            opt: CoordinateOptimizer::new(&setup.train),
            mode: setup.mode,
            params,
            eval_set,
            root,
            update: 0,
            len_avg: None,
            setup,
        })
    }

    pub fn update_index(&self) -> usize {
        self.update
    }

    /// Mode used for the next rollout (annealing decay refreshed per update).
    pub fn current_mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn rollout(&mut self) -> Result<Vec<GroupRollout>> {
        let n = self.update;
        if let PolicyMode::Annealed(mut s) = self.mode {
            s.gamma = s.decay_rate(n, self.setup.n_updates, self.len_avg.unwrap_or(0.0));
            self.mode = PolicyMode::Annealed(s);
        }
        let rng = self.root.split(STREAM_ROLLOUT).split(n as u64);
        let mut task_rng = rng.split(0);
        let cfg = &self.setup.train;
        let instances: Vec<TaskInstance> = (0..cfg.batch_prompts)
            .map(|_| self.setup.tasks.sample(&mut task_rng))
            .collect::<Result<_>>()?;
        let params = &self.params;
        let (bounds, mode) = (self.setup.bounds, self.mode);
        let mut batch: Vec<GroupRollout> = instances
            .par_iter()
            .enumerate()
            .map(|(j, inst)| generate_group(params, inst, cfg.group_size, &bounds, &mode, &rng.split(1 + j as u64)))
            .collect::<Result<_>>()?;
        for g in &mut batch {
            attach_advantages(g, cfg.adv_std_floor)?;
        }
        Ok(batch)
    }

    /// One full iteration: rollout then coordinate ascent.
    pub fn step(&mut self) -> Result<(LossReport, Vec<GroupRollout>)> {
        let update = self.update;
        let batch = self.rollout().map_err(|e| match e {
            Error::Domain(reason) if update > 0 => Error::Abort {
                update,
                reason,
                report: Box::new(LossReport {
                    update,
                    ..Default::default()
                }),
            },
            e => e,
        })?;
        let report = coordinate_step(&mut self.params, &mut self.opt, &batch, &self.setup.train, self.update)?;
        self.len_avg = Some(match self.len_avg {
            None => report.mean_len,
            Some(l) => LEN_EMA * l + (1.0 - LEN_EMA) * report.mean_len,
        });
        self.update += 1;
        Ok((report, batch))
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        let sampler = PolicySampler {
            params: &self.params,
            bounds: self.setup.bounds,
            mode: self.mode,
        };
        let rng = self.root.split(STREAM_EVAL).split(self.update as u64);
        let mut r = evaluate(&sampler, &self.eval_set, self.setup.eval_k, &rng)?;
        r.update = self.update;
        Ok(r)
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub reports: Vec<LossReport>,
    pub evals: Vec<EvalReport>,
}

/// Runs `setup.n_updates` iterations, passing every report to `sink`.
pub fn train(setup: TrainSetup, sink: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<TrainOutcome> {
    let n_updates = setup.n_updates;
    let eval_every = setup.eval_every;
    let mut trainer = Trainer::new(setup)?;
    let mut reports = Vec::with_capacity(n_updates);
    let mut evals = Vec::new();
    for u in 0..n_updates {
        let (report, batch) = trainer.step()?;
        sink(TrainEvent::Update {
            report: &report,
            batch: &batch,
        })?;
        reports.push(report);
        let last = u + 1 == n_updates;
        if eval_every > 0 && ((u + 1) % eval_every == 0 || last) {
            let e = trainer.evaluate()?;
            sink(TrainEvent::Eval(&e))?;
            evals.push(e);
        }
    }
    Ok(TrainOutcome {
        params: trainer.params,
        reports,
        evals,
    })
}
