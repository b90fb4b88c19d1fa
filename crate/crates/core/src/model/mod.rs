//! Tiny causal token model (token policy) plus the temperature head.
//!
//! The backbone is either a pre-norm transformer or a GRU. Both expose the
//! same per-position interface: [`extend`] appends one token to a
//! [`ForwardTrace`], computing only the new position from cached state.
//! [`forward`] is literally a loop over [`extend`], so an incremental rollout
//! and a one-shot recomputation produce bitwise-identical outputs.

mod checkpoint;
mod gru;
mod head;
mod params;
mod tensor;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use head::head_forward;
pub use params::{
    init_params, uniform_beta_bias, Block, GruLayer, GruParams, HeadParams, LayerNorm, Linear,
    ModelParams, ParamSet, Theta, TransformerParams, INIT_STD,
};
pub use tensor::Tensor;


use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Hidden width multiplier of the transformer MLP.
pub const MLP_RATIO: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Transformer,
    Gru,
}

impl std::str::FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Backbone::Transformer),
            "gru" => Ok(Backbone::Gru),
            _ => Err(invalid(format!("unknown backbone '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_len: usize,
    pub backbone: Backbone,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::tasks::Vocab::SIZE,
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            max_len: 64,
            backbone: Backbone::Transformer,
        }
    }
}

/// Upper bound on model size accepted from configs and checkpoints.
pub const MAX_PARAMS: usize = 50_000_000;

impl ModelConfig {
    /// Number of scalars `init_params` would allocate.
    pub fn param_count(&self) -> usize {
        let d = self.d_model as u128;
        let v = self.vocab_size as u128;
        let l = self.n_layers as u128;
        let r = MLP_RATIO as u128;
        let backbone = match self.backbone {
            Backbone::Transformer => {
                let block = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (r * d * d + r * d) + (r * d * d + d);
                v * d + self.max_len as u128 * d + l * block + 2 * d
            }
            Backbone::Gru => v * d + l * 2 * (3 * d * d + 3 * d),
        };
        let head = (d / 2) * d + d / 2 + 3 * (d / 2) + 3;
        let total = backbone + v * d + v + head;
        usize::try_from(total).unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.max_len == 0 || self.n_layers == 0 {
            return Err(invalid("vocab_size, max_len and n_layers must be positive"));
        }
        if self.d_model < 2 || !self.d_model.is_multiple_of(2) {
            return Err(invalid(format!("d_model must be even, got {}", self.d_model)));
        }
        if self.param_count() > MAX_PARAMS {
            return Err(invalid(format!(
                "config implies {} parameters, limit is {MAX_PARAMS}",
                self.param_count()
            )));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Temperature-head output `[u_c, u_alpha, u_beta]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlVector {
    pub u_c: f64,
    pub u_alpha: f64,
    pub u_beta: f64,
}

impl ControlVector {
    pub fn from_slice(u: &[f64]) -> Self {
        ControlVector {
            u_c: u[0],
            u_alpha: u[1],
            u_beta: u[2],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u_c.is_finite() && self.u_alpha.is_finite() && self.u_beta.is_finite()
    }
}

#[derive(Clone)]
pub(crate) enum BackboneCache {
    Transformer(Vec<transformer::PosCache>),
    Gru(Vec<gru::PosCache>),
}

/// Per-position outputs of a forward pass plus everything backprop needs.
#[derive(Clone)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    /// Final-layer hidden state per position.
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub controls: Vec<ControlVector>,
    head_pre: Vec<Vec<f64>>,
    cache: BackboneCache,
}

impl ForwardTrace {
    pub fn empty(params: &ModelParams) -> Self {
        let cache = match params.theta {
            Theta::Transformer(_) => BackboneCache::Transformer(Vec::new()),
            Theta::Gru(_) => BackboneCache::Gru(Vec::new()),
        };
        ForwardTrace {
            tokens: Vec::new(),
            hidden: Vec::new(),
            logits: Vec::new(),
            controls: Vec::new(),
            head_pre: Vec::new(),
            cache,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Appends one token and computes its position. Earlier positions are untouched.
pub fn extend(params: &ModelParams, trace: &mut ForwardTrace, token: usize) -> Result<()> {
    let cfg = &params.config;
    if token >= cfg.vocab_size {
        return Err(invalid(format!(
            "token id {token} out of range for vocab {}",
            cfg.vocab_size
        )));
    }
    if trace.len() >= cfg.max_len {
        return Err(invalid(format!("sequence exceeds max_len {}", cfg.max_len)));
    }
    let hidden = match (&params.theta, &mut trace.cache) {
        (Theta::Transformer(p), BackboneCache::Transformer(c)) => {
            transformer::extend(p, cfg, c, token)
        }
        (Theta::Gru(p), BackboneCache::Gru(c)) => gru::extend(p, c, token),
        _ => return Err(Error::Shape("trace built for a different backbone".into())),
    };
    let lm = match &params.theta {
        Theta::Transformer(p) => &p.lm_head,
        Theta::Gru(p) => &p.lm_head,
    };
    let mut logits = vec![0.0; cfg.vocab_size];
    tensor::affine(&lm.w, &lm.b, &hidden, &mut logits);
    let (pre, u) = head::head_forward_cached(&params.phi, &hidden);
    trace.tokens.push(token);
    trace.hidden.push(hidden);
    trace.logits.push(logits);
    trace.controls.push(u);
    trace.head_pre.push(pre);
    Ok(())
}

/// Full causal forward pass over `tokens`.
pub fn forward(params: &ModelParams, tokens: &[usize]) -> Result<ForwardTrace> {
    let mut trace = ForwardTrace::empty(params);
    for &t in tokens {
        extend(params, &mut trace, t)?;
    }
    Ok(trace)
}

/// Gradients of a scalar loss with respect to per-position outputs.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub logits: Vec<Vec<f64>>,
    pub controls: Vec<[f64; 3]>,
}

impl LossGrads {
    pub fn zeros(trace: &ForwardTrace) -> Self {
        let v = trace.logits.first().map_or(0, |l| l.len());
        LossGrads {
            logits: vec![vec![0.0; v]; trace.len()],
            controls: vec![[0.0; 3]; trace.len()],
        }
    }
}

/// Reverse-mode gradients over every parameter. With `stop_grad_at_h`, the
/// head's gradient is not propagated into the hidden states, so control
/// gradients reach only the head tensors.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grads: &LossGrads,
    stop_grad_at_h: bool,
) -> Result<ModelParams> {
    let mut out = params.zeros_like();
    backward_into(params, trace, grads, stop_grad_at_h, &mut out)?;
    Ok(out)
}

/// As [`backward`], accumulating into an existing gradient buffer.
pub fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    grads: &LossGrads,
    stop_grad_at_h: bool,
    out: &mut ModelParams,
) -> Result<()> {
    let n = trace.len();
    let v = params.config.vocab_size;
    if grads.logits.len() != n || grads.controls.len() != n {
        return Err(Error::Shape(format!(
            "loss grads cover {}/{} positions, trace has {n}",
            grads.logits.len(),
            grads.controls.len()
        )));
    }
    if grads.logits.iter().any(|g| g.len() != v) {
        return Err(Error::Shape("logit gradient width != vocab_size".into()));
    }
    let d = params.config.d_model;
    let mut dh = vec![vec![0.0; d]; n];
    {
        let (lm, dlm) = match (&params.theta, &mut out.theta) {
            (Theta::Transformer(p), Theta::Transformer(g)) => (&p.lm_head, &mut g.lm_head),
            (Theta::Gru(p), Theta::Gru(g)) => (&p.lm_head, &mut g.lm_head),
            _ => return Err(Error::Shape("gradient buffer has a different backbone".into())),
        };
        for t in 0..n {
            tensor::affine_back(
                &lm.w,
                &trace.hidden[t],
                &grads.logits[t],
                &mut dlm.w,
                &mut dlm.b,
                Some(&mut dh[t]),
            );
        }
    }
    for t in 0..n {
        let dh_t = if stop_grad_at_h { None } else { Some(&mut dh[t][..]) };
        head::head_backward(
            &params.phi,
            &trace.hidden[t],
            &trace.head_pre[t],
            &grads.controls[t],
            &mut out.phi,
            dh_t,
        );
    }
    if dh.iter().all(|g| g.iter().all(|&x| x == 0.0)) {
        return Ok(());
    }
    match (&params.theta, &trace.cache, &mut out.theta) {
        (Theta::Transformer(p), BackboneCache::Transformer(c), Theta::Transformer(g)) => {
            transformer::backward(p, &params.config, c, &trace.tokens, &dh, g)
        }
        (Theta::Gru(p), BackboneCache::Gru(c), Theta::Gru(g)) => {
            gru::backward(p, c, &trace.tokens, &dh, g)
        }
        _ => return Err(Error::Shape("trace built for a different backbone".into())),
    }
    Ok(())
}
