//! Group-relative advantages, the two clipped surrogate objectives, and
//! coordinate ascent over the token parameters then the head parameters.
//!
//! Objectives are maximized. Both are token-level means over every step of
//! every trajectory in the batch:
//!
//! ```text
//! J = (1/N) sum_{i,t} min(r_{i,t} A_i, clip(r_{i,t}, 1-eps, 1+eps) A_i)
//! ```
//!
//! with `r = exp(logp_new - logp_old)` against log-probs cached at rollout.
//! The token ratio uses the cached temperatures; the temperature ratio uses
//! the cached gate bits and intensities. The head objective never
//! backpropagates into the backbone.

mod config;
mod eval;
mod loss;
mod optim;
mod report;
mod train;

pub use config::TrainConfig;
pub use eval::{evaluate, DifficultyStats, EvalReport, GroupSampler, PolicySampler};
pub use loss::{
    advantages, attach_advantages, clipped_term, clipped_term_grad, temp_loss, temp_objective,
    token_loss, token_objective, Objective,
};
pub use optim::{AdamW, CoordinateOptimizer};
pub use report::{read_metrics_csv, LossReport};
pub use train::{coordinate_step, train, TrainEvent, TrainOutcome, TrainSetup, Trainer};

#[cfg(test)]
mod tests;
