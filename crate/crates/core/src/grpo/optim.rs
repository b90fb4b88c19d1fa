//! AdamW with decoupled weight decay, one instance per parameter set.

use super::TrainConfig;
use crate::model::{ModelParams, ParamSet};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub set: ParamSet,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(set: ParamSet, lr: f64, cfg: &TrainConfig) -> Self {
        AdamW {
            set,
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Ascent step along `grads` (gradients of an objective to maximize),
    /// touching only tensors of `self.set`.
    pub fn ascend(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let targets: Vec<_> = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .filter(|((_, s, _), _)| *s == self.set)
            .collect();
        if self.m.is_empty() {
            self.m = targets.iter().map(|((_, _, t), _)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        for (k, ((_, _, p), (_, _, g))) in targets.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            // Matrices and embeddings decay; biases and norm gains do not.
            let decay = if p.shape.len() >= 2 { self.lr * self.weight_decay } else { 0.0 };
            for i in 0..p.data.len() {
                // Minimize the negated objective.
                let gi = -g.data[i];
                p.data[i] -= decay * p.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Decoupled learning rates: one optimizer per parameter set.
#[derive(Clone, Debug)]
pub struct CoordinateOptimizer {
    pub theta: AdamW,
    pub phi: AdamW,
}

impl CoordinateOptimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        CoordinateOptimizer {
            theta: AdamW::new(ParamSet::Theta, cfg.lr_token, cfg),
            phi: AdamW::new(ParamSet::Phi, cfg.lr_temp, cfg),
        }
    }
}
