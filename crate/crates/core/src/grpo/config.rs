use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_token: f64,
    pub lr_temp: f64,
    pub clip_eps: f64,
    pub group_size: usize,
    pub batch_prompts: usize,
    pub inner_epochs: usize,
    /// Added to the population standard deviation of group rewards.
    pub adv_std_floor: f64,
    /// Decoupled decay on matrix and embedding tensors.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_token: 1e-4,
            lr_temp: 5e-3,
            clip_eps: 0.2,
            group_size: 8,
            batch_prompts: 32,
            inner_epochs: 1,
            adv_std_floor: 1e-8,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(invalid(format!("clip_eps must be in (0,1), got {}", self.clip_eps)));
        }
        if self.group_size < 2 {
            return Err(invalid("group_size must be at least 2"));
        }
        if self.batch_prompts == 0 || self.inner_epochs == 0 {
            return Err(invalid("batch_prompts and inner_epochs must be positive"));
        }
        let positive = [self.lr_token, self.lr_temp, self.adv_std_floor, self.adam_eps];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(invalid("learning rates, adv_std_floor and adam_eps must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay must be nonnegative"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(invalid("Adam betas must be in [0,1)"));
        }
        Ok(())
    }
}
