//! Elementwise activations, layer norm and row softmax, each with the
//! pieces its backward pass needs.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mish: `x * tanh(softplus(x))`.
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

/// d mish / dx = tanh(sp) + x * sech^2(sp) * sigmoid(x).
pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// Per-row layer norm cache.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Normalize a single vector over its features.
pub fn layer_norm(x: ArrayView1<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    Zip::from(&x)
        .and(gain)
        .and(bias)
        .map_collect(|&v, &g, &b| (v - mean) * inv * g + b)
}

/// Layer norm applied to every row of `x` (positions x features).
pub fn layer_norm_rows(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| (v - mean) * s);
    }
    let y = &xhat * gain + bias;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_rows_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gain: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for (((mut out, g), xh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = inv * (gi - mean_g - xi * mean_gx));
    }
    (dx, dgain, dbias)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut a = s.clone();
    for mut row in a.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    a
}

/// Backward of row softmax given its output `a`.
pub fn softmax_rows_backward(da: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    let mut ds = da * a;
    for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
        let dot = row.sum();
        Zip::from(&mut row)
            .and(&arow)
            .for_each(|d, &p| *d -= p * dot);
    }
    ds
}
