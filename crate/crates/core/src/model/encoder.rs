//! Pre-norm transformer encoder with a hand-derived backward pass.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::params::{LayerSlots, Layout, Slot};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `x @ w + b` with `b` broadcast over rows.
pub(crate) fn affine(x: &Array2<f64>, w: &Slot, b: &Slot, params: &[f64]) -> Array2<f64> {
    let mut y = x.dot(&w.mat(params));
    y += &b.vec(params);
    y
}

/// Accumulates parameter gradients of `y = x @ w + b` and returns `dx`.
pub(crate) fn affine_backward(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    w: &Slot,
    b: &Slot,
    params: &[f64],
    grads: &mut [f64],
) -> Array2<f64> {
    w.mat_mut(grads).scaled_add(1.0, &x.t().dot(dy));
    b.vec_mut(grads).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&w.mat(params).t())
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * rstd.view().insert_axis(Axis(1));
    let y = &xhat * &g + b;
    (y, LnCache { xhat, rstd })
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Slot,
    b: &Slot,
    params: &[f64],
    grads: &mut [f64],
) -> Array2<f64> {
    g.vec_mut(grads)
        .scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
    b.vec_mut(grads).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let dxhat = dy * &g.vec(params);
    let mean_d = dxhat.mean_axis(Axis(1)).expect("non-empty rows");
    let mean_dx = (&dxhat * &cache.xhat)
        .mean_axis(Axis(1))
        .expect("non-empty rows");
    let mut dx = dxhat - &mean_d.insert_axis(Axis(1)) - &cache.xhat * &mean_dx.insert_axis(Axis(1));
    dx *= &cache.rstd.view().insert_axis(Axis(1));
    dx
}

pub(crate) struct AttnCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax weights, one L×L matrix per head.
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn attn_forward(
    h: Array2<f64>,
    l: &LayerSlots,
    params: &[f64],
    n_heads: usize,
) -> (Array2<f64>, AttnCache) {
    let q = affine(&h, &l.wq, &l.bq, params);
    let k = affine(&h, &l.wk, &l.bk, params);
    let v = affine(&h, &l.wv, &l.bv, params);
    let dh = q.ncols() / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let cols = s![.., head * dh..(head + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut scores);
        concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = affine(&concat, &l.wo, &l.bo, params);
    (
        out,
        AttnCache {
            input: h,
            q,
            k,
            v,
            probs,
            concat,
        },
    )
}

fn attn_backward(
    dout: &Array2<f64>,
    c: &AttnCache,
    l: &LayerSlots,
    params: &[f64],
    grads: &mut [f64],
) -> Array2<f64> {
    let dconcat = affine_backward(dout, &c.concat, &l.wo, &l.bo, params, grads);
    let n_heads = c.probs.len();
    let dh = c.q.ncols() / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for (head, probs) in c.probs.iter().enumerate() {
        let cols = s![.., head * dh..(head + 1) * dh];
        let dout_h = dconcat.slice(cols);
        let dprobs = dout_h.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&dout_h));
        let row_dot = (&dprobs * probs).sum_axis(Axis(1));
        let dscores = (dprobs - &row_dot.insert_axis(Axis(1))) * probs * scale;
        dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&c.q.slice(cols)));
    }
    let mut dx = affine_backward(&dq, &c.input, &l.wq, &l.bq, params, grads);
    dx += &affine_backward(&dk, &c.input, &l.wk, &l.bk, params, grads);
    dx += &affine_backward(&dv, &c.input, &l.wv, &l.bv, params, grads);
    dx
}

pub(crate) struct LayerCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ffn_in: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

/// Intermediate values kept for the backward pass.
pub struct EncoderCache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

impl EncoderCache {
    /// Attention weights of layer `layer`, one L×L matrix per head.
    pub fn attention(&self, layer: usize) -> &[Array2<f64>] {
        &self.layers[layer].attn.probs
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

fn check_finite(x: &Array2<f64>, layer: usize, stage: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer, stage })
    }
}

/// Runs the encoder stack on token embeddings `u` (L×D).
pub fn encoder_forward(
    layout: &Layout,
    params: &[f64],
    n_heads: usize,
    u: Array2<f64>,
) -> Result<(Array2<f64>, EncoderCache)> {
    let mut x = u;
    let mut layers = Vec::with_capacity(layout.layers.len());
    for (i, l) in layout.layers.iter().enumerate() {
        let (h1, ln1) = ln_forward(&x, l.ln1_g.vec(params), l.ln1_b.vec(params));
        let (a, attn) = attn_forward(h1, l, params, n_heads);
        x += &a;
        check_finite(&x, i, "attention")?;
        let (h2, ln2) = ln_forward(&x, l.ln2_g.vec(params), l.ln2_b.vec(params));
        let pre = affine(&h2, &l.ff_w1, &l.ff_b1, params);
        let act = pre.mapv(gelu);
        x += &affine(&act, &l.ff_w2, &l.ff_b2, params);
        check_finite(&x, i, "feed-forward")?;
        layers.push(LayerCache {
            ln1,
            attn,
            ln2,
            ffn_in: h2,
            pre,
            act,
        });
    }
    let (z, lnf) = ln_forward(&x, layout.lnf_g.vec(params), layout.lnf_b.vec(params));
    Ok((z, EncoderCache { layers, lnf }))
}

/// Back-propagates `dz` through the stack, accumulating into `grads`, and
/// returns the gradient with respect to the input embeddings.
pub fn encoder_backward(
    layout: &Layout,
    params: &[f64],
    cache: &EncoderCache,
    dz: &Array2<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    let mut dx = ln_backward(dz, &cache.lnf, &layout.lnf_g, &layout.lnf_b, params, grads);
    for (l, c) in layout.layers.iter().zip(&cache.layers).rev() {
        let dact = affine_backward(&dx, &c.act, &l.ff_w2, &l.ff_b2, params, grads);
        let dpre = dact * &c.pre.mapv(gelu_grad);
        let dh2 = affine_backward(&dpre, &c.ffn_in, &l.ff_w1, &l.ff_b1, params, grads);
        dx += &ln_backward(&dh2, &c.ln2, &l.ln2_g, &l.ln2_b, params, grads);
        let dh1 = attn_backward(&dx, &c.attn, l, params, grads);
        dx += &ln_backward(&dh1, &c.ln1, &l.ln1_g, &l.ln1_b, params, grads);
    }
    dx
}
