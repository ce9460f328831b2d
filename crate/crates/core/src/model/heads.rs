//! Task heads. Reconstruction and season heads act on every token; the
//! forecast, scalar and week heads act on the mean of the token embeddings.

use ndarray::{Array1, Array2, Axis};

use super::encoder::{affine, affine_backward, gelu, gelu_grad};
use super::params::{LinearSlots, MlpSlots};

pub(crate) struct MlpCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

pub(crate) fn mlp_forward(z: &Array2<f64>, m: &MlpSlots, params: &[f64]) -> (Array2<f64>, MlpCache) {
    let pre = affine(z, &m.w1, &m.b1, params);
    let act = pre.mapv(gelu);
    let out = affine(&act, &m.w2, &m.b2, params);
    (out, MlpCache { pre, act })
}

pub(crate) fn mlp_backward(
    dout: &Array2<f64>,
    z: &Array2<f64>,
    cache: &MlpCache,
    m: &MlpSlots,
    params: &[f64],
    grads: &mut [f64],
) -> Array2<f64> {
    let dact = affine_backward(dout, &cache.act, &m.w2, &m.b2, params, grads);
    let dpre = dact * &cache.pre.mapv(gelu_grad);
    affine_backward(&dpre, z, &m.w1, &m.b1, params, grads)
}

pub(crate) fn linear_forward(x: &Array2<f64>, l: &LinearSlots, params: &[f64]) -> Array2<f64> {
    affine(x, &l.w, &l.b, params)
}

pub(crate) fn linear_backward(
    dout: &Array2<f64>,
    x: &Array2<f64>,
    l: &LinearSlots,
    params: &[f64],
    grads: &mut [f64],
) -> Array2<f64> {
    affine_backward(dout, x, &l.w, &l.b, params, grads)
}

/// Mean over tokens as a 1×D matrix.
pub(crate) fn pool(z: &Array2<f64>) -> Array2<f64> {
    z.mean_axis(Axis(0))
        .expect("at least one token")
        .insert_axis(Axis(0))
}

/// Spreads the gradient of the pooled embedding back over `len` tokens.
pub(crate) fn pool_backward(dpooled: &Array2<f64>, len: usize) -> Array2<f64> {
    let row: Array1<f64> = dpooled.row(0).to_owned() / len as f64;
    Array2::from_shape_fn((len, row.len()), |(_, j)| row[j])
}
