//! FLM / CLM networks assembled from conv blocks and Macaron layers.

use std::borrow::Cow;

use ndarray::{Array, Array1, Array2, Array3, Axis, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{conv_block_backward, conv_block_forward, ConvBlockParams, ConvCache};
use super::encoder::{
    macaron_backward, macaron_forward, positional_encoding, MacaronCache, MacaronLayerParams,
};
use super::ops::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Frame-level model, no temporal pooling.
    Flm,
    /// Clip-level model, temporally compressed.
    Clm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Flm => "flm",
            Variant::Clm => "clm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flm" => Ok(Variant::Flm),
            "clm" => Ok(Variant::Clm),
            _ => Err(Error::config(format!("unknown model variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_frames: usize,
    pub n_mels: usize,
    pub filters: Vec<usize>,
    pub pools: Vec<(usize, usize)>,
    pub layers: usize,
    pub heads: usize,
    pub n_classes: usize,
    pub positional_encoding: bool,
    pub half_step: f64,
}

impl ModelConfig {
    pub fn flm_default() -> Self {
        ModelConfig {
            variant: Variant::Flm,
            n_frames: crate::N_FRAMES,
            n_mels: 64,
            filters: vec![64, 64, 64],
            pools: vec![(1, 4); 3],
            layers: 1,
            heads: 4,
            n_classes: 10,
            positional_encoding: true,
            half_step: 0.5,
        }
    }

    pub fn clm_default() -> Self {
        ModelConfig {
            variant: Variant::Clm,
            filters: vec![16, 32, 64, 128, 128],
            pools: vec![(2, 2), (2, 2), (2, 2), (2, 2), (5, 4)],
            ..Self::flm_default()
        }
    }

    pub fn d_model(&self) -> usize {
        *self.filters.last().unwrap_or(&0)
    }

    pub fn out_frames(&self) -> usize {
        self.n_frames / self.pools.iter().map(|p| p.0).product::<usize>().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.filters.is_empty() || self.filters.len() != self.pools.len() {
            return bad(format!(
                "{} filters but {} pools",
                self.filters.len(),
                self.pools.len()
            ));
        }
        if self.filters.contains(&0) || self.pools.iter().any(|&(a, b)| a == 0 || b == 0) {
            return bad("filter counts and pool factors must be positive".into());
        }
        if self.n_classes == 0 || self.n_frames == 0 {
            return bad("n_classes and n_frames must be positive".into());
        }
        let (mut t, mut f) = (self.n_frames, self.n_mels);
        for &(pt, pf) in &self.pools {
            if t % pt != 0 || f % pf != 0 {
                return bad(format!("pool ({pt},{pf}) does not divide {t}x{f}"));
            }
            t /= pt;
            f /= pf;
        }
        if f != 1 {
            return bad(format!("frequency axis pools to {f} bins, expected 1"));
        }
        if self.heads == 0 || self.d_model() % self.heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model(),
                self.heads
            ));
        }
        match self.variant {
            Variant::Flm if self.pools.iter().any(|p| p.0 != 1) => {
                bad("the frame-level model may not pool over time".into())
            }
            Variant::Clm if self.pools.iter().all(|p| p.0 == 1) => {
                bad("the clip-level model needs at least one time pool".into())
            }
            Variant::Clm if self.filters.windows(2).any(|w| w[1] < w[0]) => {
                bad("clip-level filter counts must be non-decreasing".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmnParameters {
    pub config: ModelConfig,
    pub conv: Vec<ConvBlockParams>,
    pub encoder: Vec<MacaronLayerParams>,
    /// `[d_model x n_classes]`
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Borrowed view of one named parameter tensor in row-major order.
#[derive(Debug, Clone)]
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Cow<'a, [f64]>,
}

fn view<D: Dimension>(name: String, a: &Array<f64, D>) -> ParamView<'_> {
    let data = match a.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(a.iter().copied().collect()),
    };
    ParamView {
        name,
        shape: a.shape().to_vec(),
        data,
    }
}

fn slice_mut<D: Dimension>(a: &mut Array<f64, D>) -> &mut [f64] {
    if !a.is_standard_layout() {
        *a = a.as_standard_layout().into_owned();
    }
    a.as_slice_mut().expect("standard layout")
}

impl CmnParameters {
    /// All-zero parameters except layer-norm gains, which are one.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut in_ch = 1;
        let conv = config
            .filters
            .iter()
            .zip(&config.pools)
            .map(|(&out, &pool)| {
                let p = ConvBlockParams::zeros(in_ch, out, pool);
                in_ch = out;
                p
            })
            .collect();
        let d = config.d_model();
        let encoder = (0..config.layers)
            .map(|_| MacaronLayerParams::zeros(d, d, config.heads, config.half_step))
            .collect::<Result<_>>()?;
        Ok(CmnParameters {
            config: config.clone(),
            conv,
            encoder,
            head_w: Array2::zeros((d, config.n_classes)),
            head_b: Array1::zeros(config.n_classes),
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push(view(format!("conv{i}.kernel"), &c.kernel));
            out.push(view(format!("conv{i}.bias"), &c.bias));
        }
        for (l, e) in self.encoder.iter().enumerate() {
            for (tag, f) in [("pff1", &e.pff1), ("pff2", &e.pff2)] {
                out.push(view(format!("enc{l}.{tag}.w1"), &f.w1));
                out.push(view(format!("enc{l}.{tag}.b1"), &f.b1));
                out.push(view(format!("enc{l}.{tag}.w2"), &f.w2));
                out.push(view(format!("enc{l}.{tag}.b2"), &f.b2));
            }
            for (tag, w) in [
                ("wq", &e.attn.wq),
                ("wk", &e.attn.wk),
                ("wv", &e.attn.wv),
                ("wo", &e.attn.wo),
            ] {
                out.push(view(format!("enc{l}.attn.{tag}"), w));
            }
            for (tag, ln) in [("ln1", &e.ln1), ("ln2", &e.ln2), ("ln3", &e.ln3)] {
                out.push(view(format!("enc{l}.{tag}.gain"), &ln.gain));
                out.push(view(format!("enc{l}.{tag}.bias"), &ln.bias));
            }
        }
        out.push(view("head.w".into(), &self.head_w));
        out.push(view("head.b".into(), &self.head_b));
        out
    }

    /// Mutable slices in the same order as [`CmnParameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.conv {
            out.push(slice_mut(&mut c.kernel));
            out.push(slice_mut(&mut c.bias));
        }
        for e in &mut self.encoder {
            for f in [&mut e.pff1, &mut e.pff2] {
                out.push(slice_mut(&mut f.w1));
                out.push(slice_mut(&mut f.b1));
                out.push(slice_mut(&mut f.w2));
                out.push(slice_mut(&mut f.b2));
            }
            out.push(slice_mut(&mut e.attn.wq));
            out.push(slice_mut(&mut e.attn.wk));
            out.push(slice_mut(&mut e.attn.wv));
            out.push(slice_mut(&mut e.attn.wo));
            for ln in [&mut e.ln1, &mut e.ln2, &mut e.ln3] {
                out.push(slice_mut(&mut ln.gain));
                out.push(slice_mut(&mut ln.bias));
            }
        }
        out.push(slice_mut(&mut self.head_w));
        out.push(slice_mut(&mut self.head_b));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self[i] = f(self[i], other[i])` over every scalar.
    pub fn zip_apply(&mut self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) {
        let theirs = other.tensors();
        for (mine, t) in self.tensors_mut().into_iter().zip(theirs.iter()) {
            for (a, &b) in mine.iter_mut().zip(t.data.iter()) {
                *a = f(*a, b);
            }
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.zip_apply(other, |a, b| a + b);
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Seeded fan-in scaled uniform initialization.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<CmnParameters> {
    let mut p = CmnParameters::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |a: &mut [f64], fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in a {
            *v = rng.random_range(-bound..bound);
        }
    };
    for c in &mut p.conv {
        let fan_in = c.in_channels() * 9;
        fill(slice_mut(&mut c.kernel), fan_in);
    }
    let d = config.d_model();
    for e in &mut p.encoder {
        for f in [&mut e.pff1, &mut e.pff2] {
            fill(slice_mut(&mut f.w1), d);
            let d_ff = f.w2.nrows();
            fill(slice_mut(&mut f.w2), d_ff);
        }
        for w in [
            &mut e.attn.wq,
            &mut e.attn.wk,
            &mut e.attn.wv,
            &mut e.attn.wo,
        ] {
            fill(slice_mut(w), d);
        }
    }
    fill(slice_mut(&mut p.head_w), d);
    Ok(p)
}

/// Intermediate values kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    conv: Vec<ConvCache>,
    encoder: Vec<MacaronCache>,
    encoded: Array2<f64>,
    probs: Array2<f64>,
}

impl ForwardTrace {
    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }
}

fn check_input(x: &Array2<f64>, c: &ModelConfig) -> Result<()> {
    if x.dim() != (c.n_frames, c.n_mels) {
        return Err(Error::shape(format!(
            "model expects {}x{} input, got {:?}",
            c.n_frames,
            c.n_mels,
            x.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model input".into()));
    }
    Ok(())
}

/// Runs either variant. Output is `[frames x classes]` for the FLM and
/// `[1 x classes]` for the CLM.
pub fn forward(
    x: &Array2<f64>,
    p: &CmnParameters,
    keep_trace: bool,
) -> Result<(Array2<f64>, Option<ForwardTrace>)> {
    let cfg = &p.config;
    check_input(x, cfg)?;
    let mut h: Array3<f64> = x.clone().insert_axis(Axis(0));
    let mut conv_caches = Vec::new();
    for block in &p.conv {
        let (out, cache) = conv_block_forward(&h, block)?;
        if keep_trace {
            conv_caches.push(cache);
        }
        h = out;
    }
    // [C, T', 1] -> [T', C]
    let mut seq = h.index_axis(Axis(2), 0).t().to_owned();
    if cfg.positional_encoding {
        seq += &positional_encoding(seq.nrows(), seq.ncols());
    }
    let mut enc_caches = Vec::new();
    for layer in &p.encoder {
        let (out, cache) = macaron_forward(&seq, layer)?;
        if keep_trace {
            enc_caches.push(cache);
        }
        seq = out;
    }
    let pooled = match cfg.variant {
        Variant::Flm => seq.view().to_owned(),
        Variant::Clm => seq
            .mean_axis(Axis(0))
            .expect("non-empty sequence")
            .insert_axis(Axis(0)),
    };
    let mut logits = pooled.dot(&p.head_w);
    for mut row in logits.rows_mut() {
        row += &p.head_b;
    }
    let probs = logits.mapv(sigmoid);
    let trace = keep_trace.then(|| ForwardTrace {
        conv: conv_caches,
        encoder: enc_caches,
        encoded: seq,
        probs: probs.clone(),
    });
    Ok((probs, trace))
}

/// Frame probabilities `[frames x classes]`.
pub fn flm_forward(x: &Array2<f64>, p: &CmnParameters) -> Result<Array2<f64>> {
    if p.variant() != Variant::Flm {
        return Err(Error::config("flm_forward needs frame-level parameters"));
    }
    Ok(forward(x, p, false)?.0)
}

/// Clip probabilities `[classes]`.
pub fn clm_forward(x: &Array2<f64>, p: &CmnParameters) -> Result<Array1<f64>> {
    if p.variant() != Variant::Clm {
        return Err(Error::config("clm_forward needs clip-level parameters"));
    }
    Ok(forward(x, p, false)?.0.row(0).to_owned())
}

/// Per-class maximum over frames.
pub fn temporal_max_pool(fp: &Array2<f64>) -> Array1<f64> {
    fp.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b))
}

/// Gradient of a frame-wise max: routes each column gradient to the first
/// frame holding the maximum.
pub fn temporal_max_pool_backward(fp: &Array2<f64>, dclip: &Array1<f64>) -> Array2<f64> {
    let mut d = Array2::zeros(fp.dim());
    for (c, col) in fp.columns().into_iter().enumerate() {
        let mut best = 0;
        for (t, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = t;
            }
        }
        d[[best, c]] = dclip[c];
    }
    d
}

/// Reverse pass from the gradient of the loss with respect to the output
/// probabilities.
pub fn backward(
    dprobs: &Array2<f64>,
    trace: Option<&ForwardTrace>,
    p: &CmnParameters,
) -> Result<CmnParameters> {
    let trace = trace.ok_or(Error::MissingTrace)?;
    if dprobs.dim() != trace.probs.dim() {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match output {:?}",
            dprobs.dim(),
            trace.probs.dim()
        )));
    }
    let mut grads = p.zeros_like();
    let dlogits = dprobs * &trace.probs.mapv(|q| q * (1.0 - q));
    grads.head_b = dlogits.sum_axis(Axis(0));
    let n = trace.encoded.nrows();
    let mut dseq = match p.config.variant {
        Variant::Flm => {
            grads.head_w = trace.encoded.t().dot(&dlogits);
            dlogits.dot(&p.head_w.t())
        }
        Variant::Clm => {
            let pooled = trace.encoded.mean_axis(Axis(0)).expect("non-empty");
            let g = dlogits.row(0);
            grads.head_w = pooled.insert_axis(Axis(1)).dot(&g.insert_axis(Axis(0)));
            let dpooled = p.head_w.dot(&g) / n as f64;
            dpooled
                .insert_axis(Axis(0))
                .broadcast(trace.encoded.dim())
                .expect("rows")
                .to_owned()
        }
    };
    for (l, layer) in p.encoder.iter().enumerate().rev() {
        let (dx, g) = macaron_backward(&dseq, &trace.encoder[l], layer);
        grads.encoder[l] = g;
        dseq = dx;
    }
    // [T', C] -> [C, T', 1]
    let mut dh: Array3<f64> = dseq.t().to_owned().insert_axis(Axis(2));
    for (i, block) in p.conv.iter().enumerate().rev() {
        let (dx, g) = conv_block_backward(&dh, &trace.conv[i], block, i > 0);
        grads.conv[i] = g;
        if let Some(dx) = dx {
            dh = dx;
        }
    }
    Ok(grads)
}
