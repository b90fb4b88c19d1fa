//! Learnable tensors, split into the token-policy set and the head set.

use serde::{Deserialize, Serialize};

use super::{Backbone, ModelConfig, Tensor};
use crate::error::Result;
use crate::numkit::Rng;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Output bias giving `softplus(b) = 1`, i.e. a uniform Beta at init.
pub fn uniform_beta_bias() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn init(out: usize, inp: usize, rng: &mut Rng) -> Self {
        Linear {
            w: gaussian(&[out, inp], rng),
            b: Tensor::zeros(&[out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub g: Tensor,
    pub b: Tensor,
}

impl LayerNorm {
    fn init(d: usize) -> Self {
        LayerNorm {
            g: Tensor::filled(&[d], 1.0),
            b: Tensor::zeros(&[d]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln1: LayerNorm,
    /// Fused query/key/value projection, `[3d, d]`.
    pub qkv: Linear,
    pub attn_out: Linear,
    pub ln2: LayerNorm,
    pub fc: Linear,
    pub proj: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub lm_head: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    /// Input projection for gates `[r; z; n]`, `[3d, d]`.
    pub input: Linear,
    /// Recurrent projection for gates `[r; z; n]`, `[3d, d]`.
    pub hidden: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub tok_emb: Tensor,
    pub layers: Vec<GruLayer>,
    pub lm_head: Linear,
}

/// Token-policy parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Theta {
    Transformer(TransformerParams),
    Gru(GruParams),
}

/// Temperature head: `u = W2 relu(W1 h + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub theta: Theta,
    pub phi: HeadParams,
}

/// Which disjoint parameter set a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSet {
    Theta,
    Phi,
}

fn gaussian(shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in &mut t.data {
        *x = INIT_STD * rng.normal();
    }
    t
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, name: &str, l: &'a Linear) {
    out.push((format!("{name}.w"), &l.w));
    out.push((format!("{name}.b"), &l.b));
}

fn push_ln<'a>(out: &mut Vec<(String, &'a Tensor)>, name: &str, l: &'a LayerNorm) {
    out.push((format!("{name}.g"), &l.g));
    out.push((format!("{name}.b"), &l.b));
}

fn push_linear_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, name: &str, l: &'a mut Linear) {
    out.push((format!("{name}.w"), &mut l.w));
    out.push((format!("{name}.b"), &mut l.b));
}

fn push_ln_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, name: &str, l: &'a mut LayerNorm) {
    out.push((format!("{name}.g"), &mut l.g));
    out.push((format!("{name}.b"), &mut l.b));
}

impl Theta {
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match self {
            Theta::Transformer(p) => {
                out.push(("tok_emb".into(), &p.tok_emb));
                out.push(("pos_emb".into(), &p.pos_emb));
                for (i, b) in p.blocks.iter().enumerate() {
                    push_ln(&mut out, &format!("block{i}.ln1"), &b.ln1);
                    push_linear(&mut out, &format!("block{i}.qkv"), &b.qkv);
                    push_linear(&mut out, &format!("block{i}.attn_out"), &b.attn_out);
                    push_ln(&mut out, &format!("block{i}.ln2"), &b.ln2);
                    push_linear(&mut out, &format!("block{i}.fc"), &b.fc);
                    push_linear(&mut out, &format!("block{i}.proj"), &b.proj);
                }
                push_ln(&mut out, "ln_f", &p.ln_f);
                push_linear(&mut out, "lm_head", &p.lm_head);
            }
            Theta::Gru(p) => {
                out.push(("tok_emb".into(), &p.tok_emb));
                for (i, l) in p.layers.iter().enumerate() {
                    push_linear(&mut out, &format!("gru{i}.input"), &l.input);
                    push_linear(&mut out, &format!("gru{i}.hidden"), &l.hidden);
                }
                push_linear(&mut out, "lm_head", &p.lm_head);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        match self {
            Theta::Transformer(p) => {
                out.push(("tok_emb".into(), &mut p.tok_emb));
                out.push(("pos_emb".into(), &mut p.pos_emb));
                for (i, b) in p.blocks.iter_mut().enumerate() {
                    push_ln_mut(&mut out, &format!("block{i}.ln1"), &mut b.ln1);
                    push_linear_mut(&mut out, &format!("block{i}.qkv"), &mut b.qkv);
                    push_linear_mut(&mut out, &format!("block{i}.attn_out"), &mut b.attn_out);
                    push_ln_mut(&mut out, &format!("block{i}.ln2"), &mut b.ln2);
                    push_linear_mut(&mut out, &format!("block{i}.fc"), &mut b.fc);
                    push_linear_mut(&mut out, &format!("block{i}.proj"), &mut b.proj);
                }
                push_ln_mut(&mut out, "ln_f", &mut p.ln_f);
                push_linear_mut(&mut out, "lm_head", &mut p.lm_head);
            }
            Theta::Gru(p) => {
                out.push(("tok_emb".into(), &mut p.tok_emb));
                for (i, l) in p.layers.iter_mut().enumerate() {
                    push_linear_mut(&mut out, &format!("gru{i}.input"), &mut l.input);
                    push_linear_mut(&mut out, &format!("gru{i}.hidden"), &mut l.hidden);
                }
                push_linear_mut(&mut out, "lm_head", &mut p.lm_head);
            }
        }
        out
    }
}

impl Theta {
    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sq_norm()).sum()
    }
}

impl HeadParams {
    pub const NAMES: [&'static str; 4] = ["head.w1", "head.b1", "head.w2", "head.b2"];

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let [a, b, c, d] = Self::NAMES;
        vec![
            (a.into(), &self.w1),
            (b.into(), &self.b1),
            (c.into(), &self.w2),
            (d.into(), &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let [a, b, c, d] = Self::NAMES;
        vec![
            (a.into(), &mut self.w1),
            (b.into(), &mut self.b1),
            (c.into(), &mut self.w2),
            (d.into(), &mut self.b2),
        ]
    }
}

impl ModelParams {
    /// Every tensor with its name and owning set, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ParamSet, &Tensor)> {
        let mut out: Vec<_> = self
            .theta
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, ParamSet::Theta, t))
            .collect();
        out.extend(self.phi.tensors().into_iter().map(|(n, t)| (n, ParamSet::Phi, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ParamSet, &mut Tensor)> {
        let mut out: Vec<_> = self
            .theta
            .tensors_mut()
            .into_iter()
            .map(|(n, t)| (n, ParamSet::Theta, t))
            .collect();
        out.extend(
            self.phi
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (n, ParamSet::Phi, t)),
        );
        out
    }

    /// Same structure with every element zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.data.iter().all(|x| x.is_finite()))
    }

    /// L2 norm over one parameter set.
    pub fn norm(&self, set: ParamSet) -> f64 {
        self.tensors()
            .iter()
            .filter(|(_, s, _)| *s == set)
            .map(|(_, _, t)| t.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale * other`, elementwise over matching tensors.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, t)| t)
    }
}

/// Fresh parameters: Gaussian weights, zero biases, unit LayerNorm gains, and
/// head output bias `[0, b, b]` with `softplus(b) = 1`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let theta = match cfg.backbone {
        Backbone::Transformer => {
            let tok_emb = gaussian(&[v, d], &mut rng);
            let pos_emb = gaussian(&[cfg.max_len, d], &mut rng);
            let blocks = (0..cfg.n_layers)
                .map(|_| Block {
                    ln1: LayerNorm::init(d),
                    qkv: Linear::init(3 * d, d, &mut rng),
                    attn_out: Linear::init(d, d, &mut rng),
                    ln2: LayerNorm::init(d),
                    fc: Linear::init(super::MLP_RATIO * d, d, &mut rng),
                    proj: Linear::init(d, super::MLP_RATIO * d, &mut rng),
                })
                .collect();
            Theta::Transformer(TransformerParams {
                tok_emb,
                pos_emb,
                blocks,
                ln_f: LayerNorm::init(d),
                lm_head: Linear::init(v, d, &mut rng),
            })
        }
        Backbone::Gru => {
            let tok_emb = gaussian(&[v, d], &mut rng);
            let layers = (0..cfg.n_layers)
                .map(|_| GruLayer {
                    input: Linear::init(3 * d, d, &mut rng),
                    hidden: Linear::init(3 * d, d, &mut rng),
                })
                .collect();
            Theta::Gru(GruParams {
                tok_emb,
                layers,
                lm_head: Linear::init(v, d, &mut rng),
            })
        }
    };
    let half = d / 2;
    let b = uniform_beta_bias();
    let phi = HeadParams {
        w1: gaussian(&[half, d], &mut rng),
        b1: Tensor::zeros(&[half]),
        w2: gaussian(&[3, half], &mut rng),
        b2: Tensor {
            shape: vec![3],
            data: vec![0.0, b, b],
        },
    };
    Ok(ModelParams {
        config: cfg.clone(),
        theta,
        phi,
    })
}
