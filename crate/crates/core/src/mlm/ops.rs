//! Forward/backward primitives for the encoder. All gradients accumulate
//! into caller-provided buffers.

use ndarray::{s, Array1, Axis};

use super::params::{Adapter, Mat, Norm};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn linear(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    x.dot(w) + b
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub(crate) fn linear_backward(x: &Mat, w: &Mat, dy: &Mat, gw: &mut Mat, gb: &mut Mat) -> Mat {
    *gw += &x.t().dot(dy);
    *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.t())
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    xhat: Mat,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Mat, norm: &Norm) -> (Mat, NormCache) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &norm.gain + &norm.bias;
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(dy: &Mat, norm: &Norm, cache: &NormCache, grad: &mut Norm) -> Mat {
    let d = dy.ncols() as f64;
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &norm.gain;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx * cache.inv_std.view().insert_axis(Axis(1))
}

/// Row-wise softmax, in place.
pub(crate) fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[derive(Debug, Clone)]
pub(crate) struct AdapterCache {
    input: Mat,
    pre: Mat,
    act: Mat,
}

pub(crate) fn adapter_forward(x: &Mat, a: &Adapter) -> (Mat, AdapterCache) {
    let pre = linear(x, &a.down, &a.down_bias);
    let act = pre.mapv(gelu);
    let y = x + &linear(&act, &a.up, &a.up_bias);
    (
        y,
        AdapterCache {
            input: x.clone(),
            pre,
            act,
        },
    )
}

pub(crate) fn adapter_backward(dy: &Mat, a: &Adapter, cache: &AdapterCache, grad: &mut Adapter) -> Mat {
    let dact = linear_backward(&cache.act, &a.up, dy, &mut grad.up, &mut grad.up_bias);
    let dpre = dact * &cache.pre.mapv(gelu_grad);
    let dx = linear_backward(&cache.input, &a.down, &dpre, &mut grad.down, &mut grad.down_bias);
    dx + dy
}

/// Projections consumed by multi-head attention. `keys`/`values` include
/// any prefix rows, which come first.
#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    pub q: Mat,
    pub keys: Mat,
    pub values: Mat,
    pub probs: Vec<Mat>,
    pub context: Mat,
}

pub(crate) fn multi_head_attention(q: Mat, keys: Mat, values: Mat, n_heads: usize) -> AttentionCache {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Mat::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&keys.slice(cols).t()) * scale;
        softmax_rows(&mut scores);
        context.slice_mut(cols).assign(&scores.dot(&values.slice(cols)));
        probs.push(scores);
    }
    AttentionCache {
        q,
        keys,
        values,
        probs,
        context,
    }
}

/// Gradients of the attention inputs given the gradient of the context.
/// Returns `(dq, dkeys, dvalues)`, with prefix rows included in the latter two.
pub(crate) fn multi_head_attention_backward(dcontext: &Mat, cache: &AttentionCache) -> (Mat, Mat, Mat) {
    let n_heads = cache.probs.len();
    let d = cache.q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Mat::zeros(cache.q.raw_dim());
    let mut dk = Mat::zeros(cache.keys.raw_dim());
    let mut dv = Mat::zeros(cache.values.raw_dim());
    for (h, probs) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dc = dcontext.slice(cols);
        let dprobs = dc.dot(&cache.values.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&dc));
        let row_dot = (&dprobs * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dscores = (dprobs - &row_dot) * probs * scale;
        dq.slice_mut(cols).assign(&dscores.dot(&cache.keys.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    (dq, dk, dv)
}
