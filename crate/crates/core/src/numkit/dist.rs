//! Bernoulli gate and Beta intensity: sampling and exact log-densities.

use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;

use super::Rng;
use crate::error::{Error, Result};

/// Additive floor on Beta parameters after the softplus transform.
pub const EPS_STAB: f64 = 1e-6;
/// Samples and probabilities are clamped to `[UNIT_CLAMP, 1 - UNIT_CLAMP]` before logs.
pub const UNIT_CLAMP: f64 = 1e-7;

pub fn clamp_unit(x: f64) -> f64 {
    x.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Beta parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(BetaParams { alpha, beta })
    }

    /// `(softplus(u_alpha) + eps, softplus(u_beta) + eps)`.
    pub fn from_logits(u_alpha: f64, u_beta: f64, eps_stab: f64) -> Self {
        BetaParams {
            alpha: super::softplus(u_alpha) + eps_stab,
            beta: super::softplus(u_beta) + eps_stab,
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// `log Beta(z; alpha, beta)` for `z` strictly inside `(0, 1)`.
pub fn beta_log_pdf(z: f64, p: BetaParams) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("Beta density needs z in (0,1), got {z}")));
    }
    let log_b = ln_gamma(p.alpha) + ln_gamma(p.beta) - ln_gamma(p.alpha + p.beta);
    Ok((p.alpha - 1.0) * z.ln() + (p.beta - 1.0) * (-z).ln_1p() - log_b)
}

/// Exact Beta draw (Cheng's BB/BC rejection), clamped into the open interval.
pub fn beta_sample(p: BetaParams, rng: &mut Rng) -> f64 {
    let dist = rand_distr::Beta::new(p.alpha, p.beta).expect("validated Beta parameters");
    let z: f64 = dist.sample(rng);
    // BC can return NaN when both parameters are vanishingly small.
    let z = if z.is_nan() { 0.5 } else { z };
    clamp_unit(z)
}

pub fn bernoulli(pr: f64, rng: &mut Rng) -> bool {
    rng.uniform() < pr
}

pub fn bernoulli_log_prob(bit: bool, pr: f64) -> f64 {
    let pr = clamp_unit(pr);
    if bit {
        pr.ln()
    } else {
        (1.0 - pr).ln()
    }
}
