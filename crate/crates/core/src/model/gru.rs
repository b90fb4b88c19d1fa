//! Multi-layer GRU backbone (gate order `r, z, n`).

use crate::numkit::sigmoid;
use super::params::GruParams;
use super::tensor::{affine, affine_back};

#[derive(Clone)]
pub(crate) struct LayerCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// Recurrent part of the candidate gate before the reset product.
    hn: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Clone)]
pub(crate) struct PosCache {
    layers: Vec<LayerCache>,
}

pub(crate) fn extend(p: &GruParams, cache: &mut Vec<PosCache>, token: usize) -> Vec<f64> {
    let d = p.tok_emb.cols();
    let mut x = p.tok_emb.row(token).to_vec();
    let mut layers = Vec::with_capacity(p.layers.len());
    for (l, layer) in p.layers.iter().enumerate() {
        let h_prev = cache
            .last()
            .map_or_else(|| vec![0.0; d], |c| c.layers[l].h.clone());
        let mut gi = vec![0.0; 3 * d];
        let mut gh = vec![0.0; 3 * d];
        affine(&layer.input.w, &layer.input.b, &x, &mut gi);
        affine(&layer.hidden.w, &layer.hidden.b, &h_prev, &mut gh);
        let r: Vec<f64> = (0..d).map(|i| sigmoid(gi[i] + gh[i])).collect();
        let z: Vec<f64> = (0..d).map(|i| sigmoid(gi[d + i] + gh[d + i])).collect();
        let hn = gh[2 * d..].to_vec();
        let n: Vec<f64> = (0..d).map(|i| (gi[2 * d + i] + r[i] * hn[i]).tanh()).collect();
        let h: Vec<f64> = (0..d).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
        let next = h.clone();
        layers.push(LayerCache {
            x: std::mem::replace(&mut x, next),
            h_prev,
            r,
            z,
            n,
            hn,
            h,
        });
    }
    cache.push(PosCache { layers });
    x
}

pub(crate) fn backward(
    p: &GruParams,
    cache: &[PosCache],
    tokens: &[usize],
    dh_out: &[Vec<f64>],
    g: &mut GruParams,
) {
    let n_pos = cache.len();
    let d = p.tok_emb.cols();
    let mut d_above: Vec<Vec<f64>> = dh_out.to_vec();
    for l in (0..p.layers.len()).rev() {
        let layer = &p.layers[l];
        let gl = &mut g.layers[l];
        let mut dx = vec![vec![0.0; d]; n_pos];
        let mut carry = vec![0.0; d];
        for t in (0..n_pos).rev() {
            let c = &cache[t].layers[l];
            let dh: Vec<f64> = (0..d).map(|i| d_above[t][i] + carry[i]).collect();
            let mut dgi = vec![0.0; 3 * d];
            let mut dgh = vec![0.0; 3 * d];
            let mut dh_prev = vec![0.0; d];
            for i in 0..d {
                let dn = dh[i] * (1.0 - c.z[i]);
                let dz = dh[i] * (c.h_prev[i] - c.n[i]);
                dh_prev[i] = dh[i] * c.z[i];
                let dn_pre = dn * (1.0 - c.n[i] * c.n[i]);
                let dr = dn_pre * c.hn[i];
                let dr_pre = dr * c.r[i] * (1.0 - c.r[i]);
                let dz_pre = dz * c.z[i] * (1.0 - c.z[i]);
                dgi[i] = dr_pre;
                dgi[d + i] = dz_pre;
                dgi[2 * d + i] = dn_pre;
                dgh[i] = dr_pre;
                dgh[d + i] = dz_pre;
                dgh[2 * d + i] = dn_pre * c.r[i];
            }
            affine_back(&layer.input.w, &c.x, &dgi, &mut gl.input.w, &mut gl.input.b, Some(&mut dx[t]));
            affine_back(
                &layer.hidden.w,
                &c.h_prev,
                &dgh,
                &mut gl.hidden.w,
                &mut gl.hidden.b,
                Some(&mut dh_prev),
            );
            carry = dh_prev;
        }
        d_above = dx;
    }
    for t in 0..n_pos {
        for (a, b) in g.tok_emb.row_mut(tokens[t]).iter_mut().zip(&d_above[t]) {
            *a += b;
        }
    }
}
