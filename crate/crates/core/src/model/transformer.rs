//! Pre-norm causal self-attention backbone with learned positions.

use super::params::{LayerNorm, TransformerParams};
use super::tensor::{affine, affine_back};
use super::ModelConfig;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone)]
pub(crate) struct LayerCache {
    xhat1: Vec<f64>,
    rstd1: f64,
    a1: Vec<f64>,
    /// `[q; k; v]`, length `3d`.
    qkv: Vec<f64>,
    /// Attention weights per head over positions `0..=t`.
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: f64,
    a2: Vec<f64>,
    m: Vec<f64>,
    gm: Vec<f64>,
}

#[derive(Clone)]
pub(crate) struct PosCache {
    layers: Vec<LayerCache>,
    xhat_f: Vec<f64>,
    rstd_f: f64,
}

fn ln_forward(ln: &LayerNorm, x: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * rstd).collect();
    let y = xhat
        .iter()
        .zip(&ln.g.data)
        .zip(&ln.b.data)
        .map(|((xh, g), b)| xh * g + b)
        .collect();
    (xhat, rstd, y)
}

/// Accumulates LayerNorm parameter grads and adds the input grad into `dx`.
fn ln_backward(ln: &LayerNorm, xhat: &[f64], rstd: f64, dy: &[f64], g: &mut LayerNorm, dx: &mut [f64]) {
    let n = xhat.len() as f64;
    let mut dxhat = vec![0.0; xhat.len()];
    for i in 0..xhat.len() {
        g.g.data[i] += dy[i] * xhat[i];
        g.b.data[i] += dy[i];
        dxhat[i] = dy[i] * ln.g.data[i];
    }
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    for i in 0..xhat.len() {
        dx[i] += rstd * (dxhat[i] - mean_d - xhat[i] * mean_dx);
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Computes position `cache.len()` and returns its final hidden state.
pub(crate) fn extend(
    p: &TransformerParams,
    cfg: &ModelConfig,
    cache: &mut Vec<PosCache>,
    token: usize,
) -> Vec<f64> {
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let t = cache.len();
    let mut x: Vec<f64> = p
        .tok_emb
        .row(token)
        .iter()
        .zip(p.pos_emb.row(t))
        .map(|(a, b)| a + b)
        .collect();
    let mut layers = Vec::with_capacity(p.blocks.len());
    for (l, blk) in p.blocks.iter().enumerate() {
        let (xhat1, rstd1, a1) = ln_forward(&blk.ln1, &x);
        let mut qkv = vec![0.0; 3 * d];
        affine(&blk.qkv.w, &blk.qkv.b, &a1, &mut qkv);
        let mut o = vec![0.0; d];
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let q = &qkv[h * dh..(h + 1) * dh];
            let key = |j: usize| -> &[f64] {
                let src = if j == t { &qkv } else { &cache[j].layers[l].qkv };
                &src[d + h * dh..d + (h + 1) * dh]
            };
            let mut s: Vec<f64> = (0..=t)
                .map(|j| q.iter().zip(key(j)).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in &mut s {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in &mut s {
                *v /= z;
            }
            let oh = &mut o[h * dh..(h + 1) * dh];
            for (j, &pj) in s.iter().enumerate() {
                let src = if j == t { &qkv } else { &cache[j].layers[l].qkv };
                let vj = &src[2 * d + h * dh..2 * d + (h + 1) * dh];
                for (a, b) in oh.iter_mut().zip(vj) {
                    *a += pj * b;
                }
            }
            probs.push(s);
        }
        let mut attn = vec![0.0; d];
        affine(&blk.attn_out.w, &blk.attn_out.b, &o, &mut attn);
        let x_mid: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let (xhat2, rstd2, a2) = ln_forward(&blk.ln2, &x_mid);
        let mut m = vec![0.0; blk.fc.b.len()];
        affine(&blk.fc.w, &blk.fc.b, &a2, &mut m);
        let gm: Vec<f64> = m.iter().map(|&v| gelu(v)).collect();
        let mut mlp = vec![0.0; d];
        affine(&blk.proj.w, &blk.proj.b, &gm, &mut mlp);
        let x_out: Vec<f64> = x_mid.iter().zip(&mlp).map(|(a, b)| a + b).collect();
        x = x_out;
        layers.push(LayerCache {
            xhat1,
            rstd1,
            a1,
            qkv,
            probs,
            o,
            xhat2,
            rstd2,
            a2,
            m,
            gm,
        });
    }
    let (xhat_f, rstd_f, h) = ln_forward(&p.ln_f, &x);
    cache.push(PosCache {
        layers,
        xhat_f,
        rstd_f,
    });
    h
}

pub(crate) fn backward(
    p: &TransformerParams,
    cfg: &ModelConfig,
    cache: &[PosCache],
    tokens: &[usize],
    dh_out: &[Vec<f64>],
    g: &mut TransformerParams,
) {
    let n = cache.len();
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let dhd = d / n_heads;
    let scale = 1.0 / (dhd as f64).sqrt();

    let mut dx: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
    for t in 0..n {
        ln_backward(&p.ln_f, &cache[t].xhat_f, cache[t].rstd_f, &dh_out[t], &mut g.ln_f, &mut dx[t]);
    }

    for l in (0..p.blocks.len()).rev() {
        let blk = &p.blocks[l];
        let gb = &mut g.blocks[l];
        // MLP sub-block: x_out = x_mid + proj(gelu(fc(ln2(x_mid)))).
        let mut dx_mid = dx.clone();
        for t in 0..n {
            let c = &cache[t].layers[l];
            let mut dgm = vec![0.0; c.gm.len()];
            affine_back(&blk.proj.w, &c.gm, &dx[t], &mut gb.proj.w, &mut gb.proj.b, Some(&mut dgm));
            let dm: Vec<f64> = dgm.iter().zip(&c.m).map(|(a, &m)| a * gelu_grad(m)).collect();
            let mut da2 = vec![0.0; d];
            affine_back(&blk.fc.w, &c.a2, &dm, &mut gb.fc.w, &mut gb.fc.b, Some(&mut da2));
            ln_backward(&blk.ln2, &c.xhat2, c.rstd2, &da2, &mut gb.ln2, &mut dx_mid[t]);
        }
        // Attention sub-block: x_mid = x_in + attn_out(attention(qkv(ln1(x_in)))).
        let mut dqkv: Vec<Vec<f64>> = vec![vec![0.0; 3 * d]; n];
        for t in 0..n {
            let c = &cache[t].layers[l];
            let mut d_o = vec![0.0; d];
            affine_back(
                &blk.attn_out.w,
                &c.o,
                &dx_mid[t],
                &mut gb.attn_out.w,
                &mut gb.attn_out.b,
                Some(&mut d_o),
            );
            for h in 0..n_heads {
                let doh = &d_o[h * dhd..(h + 1) * dhd];
                let pr = &c.probs[h];
                let dp: Vec<f64> = (0..=t)
                    .map(|j| {
                        let vj = &cache[j].layers[l].qkv[2 * d + h * dhd..2 * d + (h + 1) * dhd];
                        doh.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                let dot: f64 = pr.iter().zip(&dp).map(|(a, b)| a * b).sum();
                let q = &c.qkv[h * dhd..(h + 1) * dhd];
                for j in 0..=t {
                    let ds = pr[j] * (dp[j] - dot) * scale;
                    let kj = &cache[j].layers[l].qkv[d + h * dhd..d + (h + 1) * dhd];
                    for i in 0..dhd {
                        dqkv[t][h * dhd + i] += ds * kj[i];
                        dqkv[j][d + h * dhd + i] += ds * q[i];
                        dqkv[j][2 * d + h * dhd + i] += pr[j] * doh[i];
                    }
                }
            }
        }
        let mut dx_in = dx_mid;
        for t in 0..n {
            let c = &cache[t].layers[l];
            let mut da1 = vec![0.0; d];
            affine_back(&blk.qkv.w, &c.a1, &dqkv[t], &mut gb.qkv.w, &mut gb.qkv.b, Some(&mut da1));
            ln_backward(&blk.ln1, &c.xhat1, c.rstd1, &da1, &mut gb.ln1, &mut dx_in[t]);
        }
        dx = dx_in;
    }

    for t in 0..n {
        for (a, b) in g.tok_emb.row_mut(tokens[t]).iter_mut().zip(&dx[t]) {
            *a += b;
        }
        for (a, b) in g.pos_emb.row_mut(t).iter_mut().zip(&dx[t]) {
            *a += b;
        }
    }
}
