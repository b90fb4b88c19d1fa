use rayon::prelude::*;

use super::TrainConfig;
use crate::error::{invalid, Error, Result};
use crate::model::{self, LossGrads, ModelParams};
use crate::numkit::softmax_with_temperature;
use crate::rollout::{self, mode_temp_log_prob_and_grad, GroupRollout};

/// `(R_i - mean) / (std + floor)` with the population standard deviation.
pub fn advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + std_floor;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

pub fn attach_advantages(group: &mut GroupRollout, std_floor: f64) -> Result<()> {
    if group.rewards.len() < 2 {
        return Err(invalid("advantages need at least two trajectories"));
    }
    group.advantages = Some(advantages(&group.rewards, std_floor));
    Ok(())
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_term(ratio: f64, adv: f64, clip_eps: f64) -> f64 {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
    unclipped.min(clipped)
}

/// Derivative of [`clipped_term`] with respect to `log r`.
pub fn clipped_term_grad(ratio: f64, adv: f64, clip_eps: f64) -> f64 {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Value of a surrogate objective and its gradient.
#[derive(Clone, Debug)]
pub struct Objective {
    pub value: f64,
    pub grads: ModelParams,
    pub n_steps: usize,
    /// Fraction of steps whose gradient was cut by clipping.
    pub clip_frac: f64,
    /// Largest `|r - 1|` over all steps.
    pub max_ratio_dev: f64,
}

#[derive(Clone, Copy)]
enum Which {
    Token,
    Temp,
}

struct Partial {
    value: f64,
    clipped: usize,
    max_dev: f64,
    grads: ModelParams,
}

fn group_partial(
    params: &ModelParams,
    group: &GroupRollout,
    which: Which,
    clip_eps: f64,
    scale: f64,
) -> Result<Partial> {
    let adv = group
        .advantages
        .as_ref()
        .ok_or_else(|| invalid("group advantages not computed"))?;
    if adv.len() != group.trajectories.len() {
        return Err(Error::Shape("advantage count != trajectory count".into()));
    }
    let mut out = Partial {
        value: 0.0,
        clipped: 0,
        max_dev: 0.0,
        grads: params.zeros_like(),
    };
    if matches!(which, Which::Temp) && !group.mode.uses_head() {
        return Ok(out);
    }
    let base = rollout::prompt_trace(params, &group.instance)?;
    let off = group.instance.prompt.len() - 1;
    for (i, traj) in group.trajectories.iter().enumerate() {
        if traj.steps.is_empty() {
            continue;
        }
        let mut trace = base.clone();
        for s in &traj.steps[..traj.steps.len() - 1] {
            model::extend(params, &mut trace, s.y)?;
        }
        let mut lg = LossGrads::zeros(&trace);
        let a = adv[i];
        for (k, s) in traj.steps.iter().enumerate() {
            let pos = off + k;
            match which {
                Which::Token => {
                    let p = softmax_with_temperature(&trace.logits[pos], s.tau)?;
                    let lp = p[s.y].ln();
                    let r = (lp - s.logp_token_old).exp();
                    out.value += clipped_term(r, a, clip_eps);
                    out.max_dev = out.max_dev.max((r - 1.0).abs());
                    let g = clipped_term_grad(r, a, clip_eps) * scale;
                    if g == 0.0 && a != 0.0 {
                        out.clipped += 1;
                    }
                    if g != 0.0 {
                        let row = &mut lg.logits[pos];
                        for (v, dv) in row.iter_mut().enumerate() {
                            let onehot = if v == s.y { 1.0 } else { 0.0 };
                            *dv = g * (onehot - p[v]) / s.tau;
                        }
                    }
                }
                Which::Temp => {
                    let (lp, du) =
                        mode_temp_log_prob_and_grad(&trace.controls[pos], s.c, s.z, &group.mode)?;
                    let r = (lp - s.logp_temp_old).exp();
                    out.value += clipped_term(r, a, clip_eps);
                    out.max_dev = out.max_dev.max((r - 1.0).abs());
                    let g = clipped_term_grad(r, a, clip_eps) * scale;
                    if g == 0.0 && a != 0.0 {
                        out.clipped += 1;
                    }
                    lg.controls[pos] = [g * du[0], g * du[1], g * du[2]];
                }
            }
        }
        let stop = matches!(which, Which::Temp);
        model::backward_into(params, &trace, &lg, stop, &mut out.grads)?;
    }
    Ok(out)
}

fn objective(params: &ModelParams, batch: &[GroupRollout], which: Which, clip_eps: f64) -> Result<Objective> {
    let n_steps: usize = batch
        .iter()
        .flat_map(|g| g.trajectories.iter())
        .map(|t| t.steps.len())
        .sum();
    let scale = if n_steps > 0 { 1.0 / n_steps as f64 } else { 0.0 };
    let partials: Vec<Partial> = batch
        .par_iter()
        .map(|g| group_partial(params, g, which, clip_eps, scale))
        .collect::<Result<_>>()?;
    let mut grads = params.zeros_like();
    let (mut value, mut clipped, mut max_dev) = (0.0, 0, 0.0f64);
    for p in &partials {
        grads.add_scaled(&p.grads, 1.0);
        value += p.value;
        clipped += p.clipped;
        max_dev = max_dev.max(p.max_dev);
    }
    Ok(Objective {
        value: value * scale,
        grads,
        n_steps,
        clip_frac: clipped as f64 * scale,
        max_ratio_dev: max_dev,
    })
}

/// Token-policy surrogate over a batch; gradient reaches the backbone only.
pub fn token_objective(params: &ModelParams, batch: &[GroupRollout], cfg: &TrainConfig) -> Result<Objective> {
    objective(params, batch, Which::Token, cfg.clip_eps)
}

/// Temperature-policy surrogate over a batch; gradient reaches the head only.
pub fn temp_objective(params: &ModelParams, batch: &[GroupRollout], cfg: &TrainConfig) -> Result<Objective> {
    objective(params, batch, Which::Temp, cfg.clip_eps)
}

pub fn token_loss(params: &ModelParams, group: &GroupRollout, cfg: &TrainConfig) -> Result<Objective> {
    token_objective(params, std::slice::from_ref(group), cfg)
}

pub fn temp_loss(params: &ModelParams, group: &GroupRollout, cfg: &TrainConfig) -> Result<Objective> {
    temp_objective(params, std::slice::from_ref(group), cfg)
}
