//! Numerically stable scalar/vector math and the two action distributions.

mod dist;
mod rng;

pub use dist::{
    bernoulli, bernoulli_log_prob, beta_log_pdf, beta_sample, clamp_unit, BetaParams, EPS_STAB,
    UNIT_CLAMP,
};
pub use rng::Rng;

use crate::error::{invalid, Result};

/// A probability vector: nonnegative entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Probs(Vec<f64>);

impl Probs {
    /// Validates entries are nonnegative and sum to one within 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Probs(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Inverse-CDF categorical draw.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }
}

impl std::ops::Index<usize> for Probs {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `softmax(logits / tau)` with max subtraction.
pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<Probs> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return Err(invalid("empty logit vector"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(invalid("non-finite logit"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| ((l - max) / tau).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    Ok(Probs(out))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &Probs) -> f64 {
    -p.0.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
