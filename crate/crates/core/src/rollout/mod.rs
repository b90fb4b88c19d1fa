//! Hierarchical generation: at every decoding step the temperature policy
//! picks `tau_t` from the current hidden state, then the token policy samples
//! `y_t` from `softmax(logits / tau_t)`. Every decision is persisted with its
//! rollout-time log-probabilities so the losses can recompute ratios later.

mod mode;
mod trajectory;

pub use mode::{AnnealSchedule, PolicyMode, TempBounds};
pub use trajectory::{
    dump_trajectories, load_trajectories, parse_trajectory_line, GroupRollout, Trajectory,
    TrajectoryRecord, TrajectoryStep,
};

use rayon::prelude::*;
use statrs::function::gamma::digamma;

use crate::error::{invalid, Error, Result};
use crate::model::{self, ControlVector, ForwardTrace, ModelParams};
use crate::numkit::{
    bernoulli, beta_log_pdf, beta_sample, clamp_unit, entropy, sigmoid, softmax_with_temperature,
    BetaParams, Rng, EPS_STAB, UNIT_CLAMP,
};
use crate::tasks::{self, TaskInstance, Token};

/// One temperature decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TempAction {
    pub c: bool,
    pub z: Option<f64>,
    pub tau: f64,
}

/// Chooses the temperature for 0-based decoding position `position`.
pub fn select_temperature(
    u: &ControlVector,
    tau_prev: f64,
    bounds: &TempBounds,
    mode: &PolicyMode,
    position: usize,
    rng: &mut Rng,
) -> TempAction {
    let resample = |rng: &mut Rng| {
        let z = beta_sample(BetaParams::from_logits(u.u_alpha, u.u_beta, EPS_STAB), rng);
        TempAction {
            c: true,
            z: Some(z),
            tau: bounds.affine(z),
        }
    };
    let hold = TempAction {
        c: false,
        z: None,
        tau: tau_prev,
    };
    match mode {
        PolicyMode::Selective => {
            if bernoulli(sigmoid(u.u_c), rng) {
                resample(rng)
            } else {
                hold
            }
        }
        PolicyMode::AlwaysUpdate => resample(rng),
        PolicyMode::PromptLevel => {
            if position == 0 {
                resample(rng)
            } else {
                hold
            }
        }
        PolicyMode::Fixed { tau } => TempAction {
            c: false,
            z: None,
            tau: *tau,
        },
        PolicyMode::Annealed(s) => TempAction {
            c: false,
            z: None,
            tau: s.tau_at(position + 1),
        },
    }
}

/// Log-probability of a temperature decision and its gradient w.r.t. the
/// control vector. The Bernoulli term is included only when the gate was
/// sampled from the policy (`gate_sampled`); the Beta term only when `c`.
pub fn temp_log_prob_and_grad(
    u: &ControlVector,
    c: bool,
    z: Option<f64>,
    gate_sampled: bool,
    eps_stab: f64,
) -> Result<(f64, [f64; 3])> {
    let mut logp = 0.0;
    let mut grad = [0.0; 3];
    if gate_sampled {
        let s = sigmoid(u.u_c);
        let p = clamp_unit(s);
        let inside = p == s;
        if c {
            logp += p.ln();
            grad[0] = if inside { 1.0 - s } else { 0.0 };
        } else {
            logp += (1.0 - p).ln();
            grad[0] = if inside { -s } else { 0.0 };
        }
    }
    if c {
        let z = z.ok_or_else(|| invalid("c = 1 requires a stored intensity z"))?;
        let z = z.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP);
        let bp = BetaParams::from_logits(u.u_alpha, u.u_beta, eps_stab);
        logp += beta_log_pdf(z, bp)?;
        let psi_sum = digamma(bp.alpha + bp.beta);
        grad[1] = (z.ln() - digamma(bp.alpha) + psi_sum) * sigmoid(u.u_alpha);
        grad[2] = ((-z).ln_1p() - digamma(bp.beta) + psi_sum) * sigmoid(u.u_beta);
    } else if z.is_some() {
        return Err(invalid("c = 0 step must not carry an intensity"));
    }
    Ok((logp, grad))
}

/// `log P(c) + c log Beta(z | alpha, beta)` with a sampled gate.
pub fn joint_temp_log_prob(u: &ControlVector, c: bool, z: Option<f64>, eps_stab: f64) -> Result<f64> {
    temp_log_prob_and_grad(u, c, z, true, eps_stab).map(|(lp, _)| lp)
}

/// Log-probability the policy assigned to a stored step under `mode`.
pub fn mode_temp_log_prob_and_grad(
    u: &ControlVector,
    c: bool,
    z: Option<f64>,
    mode: &PolicyMode,
) -> Result<(f64, [f64; 3])> {
    if !mode.uses_head() {
        return Ok((0.0, [0.0; 3]));
    }
    let gate_sampled = matches!(mode, PolicyMode::Selective);
    temp_log_prob_and_grad(u, c, z, gate_sampled, EPS_STAB)
}

/// `log softmax(logits / tau)[y]`, computed exactly as during rollout.
pub fn token_log_prob(logits: &[f64], tau: f64, y: usize) -> Result<f64> {
    let p = softmax_with_temperature(logits, tau)?;
    Ok(p[y].ln())
}

/// One decoding step from the last position of `prefix`. The caller appends
/// the sampled token to the trace.
pub fn hierarchical_step(
    params: &ModelParams,
    prefix: &ForwardTrace,
    tau_prev: f64,
    bounds: &TempBounds,
    mode: &PolicyMode,
    position: usize,
    rng: &mut Rng,
) -> Result<(TrajectoryStep, f64)> {
    let last = prefix
        .len()
        .checked_sub(1)
        .ok_or_else(|| invalid("empty prefix"))?;
    if prefix.logits[last].len() != params.config.vocab_size {
        return Err(Error::Shape("prefix trace does not match params".into()));
    }
    let u = prefix.controls[last];
    let action = select_temperature(&u, tau_prev, bounds, mode, position, rng);
    let probs = softmax_with_temperature(&prefix.logits[last], action.tau)?;
    let y = probs.sample(rng);
    let step = TrajectoryStep {
        c: action.c,
        z: action.z,
        tau: action.tau,
        y,
        logp_token_old: probs[y].ln(),
        logp_temp_old: mode_temp_log_prob_and_grad(&u, action.c, action.z, mode)?.0,
    };
    Ok((step, entropy(&probs)))
}

/// Generates one completion, continuing from an already-computed prompt trace.
pub fn generate_from_prompt(
    params: &ModelParams,
    prompt_trace: ForwardTrace,
    bounds: &TempBounds,
    mode: &PolicyMode,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let max_len = params.config.max_len;
    let budget = max_len.saturating_sub(prompt_trace.len());
    let mut trace = prompt_trace;
    let mut tau = match mode {
        PolicyMode::Fixed { tau } => *tau,
        _ => bounds.tau_init,
    };
    let mut steps = Vec::new();
    let mut entropies = Vec::new();
    let eoa = Token::Eoa.id();
    for position in 0..budget {
        let (step, h) = hierarchical_step(params, &trace, tau, bounds, mode, position, rng)?;
        tau = step.tau;
        let y = step.y;
        steps.push(step);
        entropies.push(h);
        if y == eoa || position + 1 == budget {
            break;
        }
        model::extend(params, &mut trace, y)?;
    }
    Ok(Trajectory {
        steps,
        entropies,
        reward: 0.0,
    })
}

pub fn prompt_trace(params: &ModelParams, instance: &TaskInstance) -> Result<ForwardTrace> {
    if instance.prompt.len() >= params.config.max_len {
        return Err(invalid(format!(
            "prompt of length {} leaves no room under max_len {}",
            instance.prompt.len(),
            params.config.max_len
        )));
    }
    model::forward(params, &instance.prompt)
}

/// `g` independent trajectories for one prompt, scored by the verifier.
/// Member `i` draws from stream `rng.split(i)`.
pub fn generate_group(
    params: &ModelParams,
    instance: &TaskInstance,
    g: usize,
    bounds: &TempBounds,
    mode: &PolicyMode,
    rng: &Rng,
) -> Result<GroupRollout> {
    if g < 2 {
        return Err(invalid(format!("group size must be at least 2, got {g}")));
    }
    bounds.validate()?;
    let base = prompt_trace(params, instance)?;
    let trajectories: Vec<Trajectory> = (0..g)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.split(i as u64);
            let mut traj = generate_from_prompt(params, base.clone(), bounds, mode, &mut r)?;
            traj.reward = tasks::verify(instance, &traj.completion());
            Ok::<_, Error>(traj)
        })
        .collect::<Result<_>>()?;
    let rewards = trajectories.iter().map(|t| t.reward).collect();
    Ok(GroupRollout {
        instance: instance.clone(),
        mode: *mode,
        bounds: *bounds,
        trajectories,
        rewards,
        advantages: None,
    })
}
