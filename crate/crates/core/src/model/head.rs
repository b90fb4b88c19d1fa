//! `u = W2 relu(W1 h + b1) + b2`.

use super::tensor::{affine, affine_back};
use super::{ControlVector, HeadParams};

pub(crate) fn head_forward_cached(p: &HeadParams, h: &[f64]) -> (Vec<f64>, ControlVector) {
    let mut pre = vec![0.0; p.b1.len()];
    affine(&p.w1, &p.b1, h, &mut pre);
    let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
    let mut u = [0.0; 3];
    affine(&p.w2, &p.b2, &act, &mut u);
    (pre, ControlVector::from_slice(&u))
}

/// Control vector for an arbitrary hidden state.
pub fn head_forward(p: &HeadParams, h: &[f64]) -> ControlVector {
    head_forward_cached(p, h).1
}

pub(crate) fn head_backward(
    p: &HeadParams,
    h: &[f64],
    pre: &[f64],
    du: &[f64; 3],
    g: &mut HeadParams,
    dh: Option<&mut [f64]>,
) {
    if du.iter().all(|&x| x == 0.0) {
        return;
    }
    let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
    let mut dact = vec![0.0; act.len()];
    affine_back(&p.w2, &act, du, &mut g.w2, &mut g.b2, Some(&mut dact));
    for (d, &x) in dact.iter_mut().zip(pre) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    affine_back(&p.w1, h, &dact, &mut g.w1, &mut g.b1, dh);
}
