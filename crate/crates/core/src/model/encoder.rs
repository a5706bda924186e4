//! Position-wise feedforward, multi-head self-attention and the Macaron layer.

use ndarray::{s, Array1, Array2, Axis};

use super::ops::{
    layer_norm_rows, layer_norm_rows_backward, mish, mish_grad, softmax_rows,
    softmax_rows_backward, LayerNormCache,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PffParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl PffParams {
    pub fn zeros(d_model: usize, d_ff: usize) -> Self {
        PffParams {
            w1: Array2::zeros((d_model, d_ff)),
            b1: Array1::zeros(d_ff),
            w2: Array2::zeros((d_ff, d_model)),
            b2: Array1::zeros(d_model),
        }
    }
}

/// Projections are `d_model x d_model`; head `i` owns columns
/// `i*d_k..(i+1)*d_k` of `wq`, `wk`, `wv` and rows of `wo`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub heads: usize,
}

impl AttentionParams {
    pub fn zeros(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let z = Array2::zeros((d_model, d_model));
        Ok(AttentionParams {
            wq: z.clone(),
            wk: z.clone(),
            wv: z.clone(),
            wo: z,
            heads,
        })
    }

    pub fn d_k(&self) -> usize {
        self.wq.ncols() / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        LayerNormParams {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacaronLayerParams {
    pub pff1: PffParams,
    pub pff2: PffParams,
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub ln3: LayerNormParams,
    /// Residual weight on each feedforward branch.
    pub half_step: f64,
}

impl MacaronLayerParams {
    pub fn zeros(d_model: usize, d_ff: usize, heads: usize, half_step: f64) -> Result<Self> {
        Ok(MacaronLayerParams {
            pff1: PffParams::zeros(d_model, d_ff),
            pff2: PffParams::zeros(d_model, d_ff),
            attn: AttentionParams::zeros(d_model, heads)?,
            ln1: LayerNormParams::identity(d_model),
            ln2: LayerNormParams::identity(d_model),
            ln3: LayerNormParams::identity(d_model),
            half_step,
        })
    }
}

fn add_row(m: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in m.rows_mut() {
        row += b;
    }
}

#[derive(Debug, Clone)]
pub struct PffCache {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
}

pub fn pff_forward(x: &Array2<f64>, p: &PffParams) -> (Array2<f64>, PffCache) {
    let mut z1 = x.dot(&p.w1);
    add_row(&mut z1, &p.b1);
    let a1 = z1.mapv(mish);
    let mut out = a1.dot(&p.w2);
    add_row(&mut out, &p.b2);
    (
        out,
        PffCache {
            x: x.clone(),
            z1,
            a1,
        },
    )
}

pub fn pff(x: &Array2<f64>, p: &PffParams) -> Array2<f64> {
    pff_forward(x, p).0
}

pub fn pff_backward(dout: &Array2<f64>, c: &PffCache, p: &PffParams) -> (Array2<f64>, PffParams) {
    let w2 = c.a1.t().dot(dout);
    let b2 = dout.sum_axis(Axis(0));
    let mut dz1 = dout.dot(&p.w2.t());
    dz1.zip_mut_with(&c.z1, |d, &z| *d *= mish_grad(z));
    let w1 = c.x.t().dot(&dz1);
    let b1 = dz1.sum_axis(Axis(0));
    let dx = dz1.dot(&p.w1.t());
    (dx, PffParams { w1, b1, w2, b2 })
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
}

/// Scaled dot-product attention.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(attention_forward(q, k, v)?.0)
}

pub fn attention_forward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
) -> Result<(Array2<f64>, AttentionCache)> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() {
        return Err(Error::shape(format!(
            "attention shapes q {:?}, k {:?}, v {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let a = softmax_rows(&(q.dot(&k.t()) * scale));
    let out = a.dot(v);
    Ok((
        out,
        AttentionCache {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            a,
        },
    ))
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward(
    dout: &Array2<f64>,
    c: &AttentionCache,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (c.q.ncols() as f64).sqrt();
    let dv = c.a.t().dot(dout);
    let da = dout.dot(&c.v.t());
    let ds = softmax_rows_backward(&da, &c.a) * scale;
    let dq = ds.dot(&c.k);
    let dk = ds.t().dot(&c.q);
    (dq, dk, dv)
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    x: Array2<f64>,
    heads: Vec<AttentionCache>,
    concat: Array2<f64>,
}

pub fn multi_head_attention(x: &Array2<f64>, p: &AttentionParams) -> Result<Array2<f64>> {
    Ok(mha_forward(x, p)?.0)
}

pub fn mha_forward(x: &Array2<f64>, p: &AttentionParams) -> Result<(Array2<f64>, MhaCache)> {
    let d = p.wq.nrows();
    if x.ncols() != d {
        return Err(Error::shape(format!(
            "attention expects {d} features, got {}",
            x.ncols()
        )));
    }
    let dk = p.d_k();
    let (q, k, v) = (x.dot(&p.wq), x.dot(&p.wk), x.dot(&p.wv));
    let mut concat = Array2::zeros((x.nrows(), d));
    let mut heads = Vec::with_capacity(p.heads);
    for i in 0..p.heads {
        let cols = s![.., i * dk..(i + 1) * dk];
        let (hout, hc) = attention_forward(
            &q.slice(cols).to_owned(),
            &k.slice(cols).to_owned(),
            &v.slice(cols).to_owned(),
        )?;
        concat.slice_mut(cols).assign(&hout);
        heads.push(hc);
    }
    let out = concat.dot(&p.wo);
    Ok((
        out,
        MhaCache {
            x: x.clone(),
            heads,
            concat,
        },
    ))
}

pub fn mha_backward(
    dout: &Array2<f64>,
    c: &MhaCache,
    p: &AttentionParams,
) -> (Array2<f64>, AttentionParams) {
    let dk_dim = p.d_k();
    let wo = c.concat.t().dot(dout);
    let dconcat = dout.dot(&p.wo.t());
    let shape = c.x.dim();
    let (mut dq, mut dk, mut dv) = (
        Array2::zeros(shape),
        Array2::zeros(shape),
        Array2::zeros(shape),
    );
    for (i, hc) in c.heads.iter().enumerate() {
        let cols = s![.., i * dk_dim..(i + 1) * dk_dim];
        let (q, k, v) = attention_backward(&dconcat.slice(cols).to_owned(), hc);
        dq.slice_mut(cols).assign(&q);
        dk.slice_mut(cols).assign(&k);
        dv.slice_mut(cols).assign(&v);
    }
    let grads = AttentionParams {
        wq: c.x.t().dot(&dq),
        wk: c.x.t().dot(&dk),
        wv: c.x.t().dot(&dv),
        wo,
        heads: p.heads,
    };
    let dx = dq.dot(&p.wq.t()) + dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
    (dx, grads)
}

#[derive(Debug, Clone)]
pub struct MacaronCache {
    pff1: PffCache,
    ln1: LayerNormCache,
    mha: MhaCache,
    ln2: LayerNormCache,
    pff2: PffCache,
    ln3: LayerNormCache,
}

pub fn macaron_layer(x: &Array2<f64>, p: &MacaronLayerParams) -> Result<Array2<f64>> {
    Ok(macaron_forward(x, p)?.0)
}

pub fn macaron_forward(
    x: &Array2<f64>,
    p: &MacaronLayerParams,
) -> Result<(Array2<f64>, MacaronCache)> {
    let (f1, pff1) = pff_forward(x, &p.pff1);
    let (x1, ln1) = layer_norm_rows(&(x + &(f1 * p.half_step)), &p.ln1.gain, &p.ln1.bias);
    let (att, mha) = mha_forward(&x1, &p.attn)?;
    let (x2, ln2) = layer_norm_rows(&(&x1 + &att), &p.ln2.gain, &p.ln2.bias);
    let (f2, pff2) = pff_forward(&x2, &p.pff2);
    let (y, ln3) = layer_norm_rows(&(&x2 + &(f2 * p.half_step)), &p.ln3.gain, &p.ln3.bias);
    Ok((
        y,
        MacaronCache {
            pff1,
            ln1,
            mha,
            ln2,
            pff2,
            ln3,
        },
    ))
}

pub fn macaron_backward(
    dy: &Array2<f64>,
    c: &MacaronCache,
    p: &MacaronLayerParams,
) -> (Array2<f64>, MacaronLayerParams) {
    let h = p.half_step;
    let (dr3, g3, b3) = layer_norm_rows_backward(dy, &c.ln3, &p.ln3.gain);
    let (dx2_f, pff2) = pff_backward(&(&dr3 * h), &c.pff2, &p.pff2);
    let dx2 = dr3 + dx2_f;
    let (dr2, g2, b2) = layer_norm_rows_backward(&dx2, &c.ln2, &p.ln2.gain);
    let (dx1_a, attn) = mha_backward(&dr2, &c.mha, &p.attn);
    let dx1 = dr2 + dx1_a;
    let (dr1, g1, b1) = layer_norm_rows_backward(&dx1, &c.ln1, &p.ln1.gain);
    let (dx_f, pff1) = pff_backward(&(&dr1 * h), &c.pff1, &p.pff1);
    let dx = dr1 + dx_f;
    let grads = MacaronLayerParams {
        pff1,
        pff2,
        attn,
        ln1: LayerNormParams { gain: g1, bias: b1 },
        ln2: LayerNormParams { gain: g2, bias: b2 },
        ln3: LayerNormParams { gain: g3, bias: b3 },
        half_step: h,
    };
    (dx, grads)
}

/// Sinusoidal positions: `sin` on even features, `cos` on odd ones.
pub fn positional_encoding(n: usize, d_model: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d_model), |(pos, j)| {
        let i2 = (j - j % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
