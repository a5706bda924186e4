//! Convolutive nonnegative matrix factorization under the generalized KL
//! divergence.
//!
//! A nonnegative `m x n` matrix `V` is modelled as
//! `V ~ sum_t W(t) * shift(H, +t)` for `t = 0..T`, where `shift(H, +t)` moves
//! the columns of `H` right by `t` and zero-fills. With `T = 1` this is plain
//! KL-NMF.

mod dictionary;

pub use dictionary::{
    binarize_activation, build_pseudo_label, extract_event_dictionary, infer_activation,
    load_dictionary, save_dictionary, EventDictionary, FrameMask, PseudoStrongLabel,
};

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Added to `V~` inside ratios and to update denominators.
pub const EPS: f64 = 1e-12;

/// `T` basis slices, each `m x r`, indexed by shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutiveBasis {
    slices: Vec<Array2<f64>>,
}

impl ConvolutiveBasis {
    pub fn new(slices: Vec<Array2<f64>>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::shape("basis needs at least one shift"))?;
        let dim = first.dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::shape("basis slices must be non-empty"));
        }
        if slices.iter().any(|w| w.dim() != dim) {
            return Err(Error::shape("basis slices differ in shape"));
        }
        if slices
            .iter()
            .flatten()
            .any(|&x| !(x >= 0.0) || !x.is_finite())
        {
            return Err(Error::NotNonnegative("basis".into()));
        }
        Ok(ConvolutiveBasis { slices })
    }

    pub fn n_bins(&self) -> usize {
        self.slices[0].nrows()
    }

    pub fn n_components(&self) -> usize {
        self.slices[0].ncols()
    }

    pub fn n_shifts(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, t: usize) -> &Array2<f64> {
        &self.slices[t]
    }

    pub fn slices(&self) -> &[Array2<f64>] {
        &self.slices
    }

    /// Concatenate along the component axis.
    pub fn concat(parts: &[ConvolutiveBasis]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let (m, t) = (first.n_bins(), first.n_shifts());
        if parts.iter().any(|p| p.n_bins() != m || p.n_shifts() != t) {
            return Err(Error::shape("inconsistent bins or shifts across bases"));
        }
        let slices = (0..t)
            .map(|shift| {
                let views: Vec<_> = parts.iter().map(|p| p.slices[shift].view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("row counts checked")
            })
            .collect();
        Ok(ConvolutiveBasis { slices })
    }

    /// Scale every component so its entries over all bins and shifts sum to 1.
    /// All-zero components are left alone.
    pub fn normalize_components(&mut self) {
        let r = self.n_components();
        for k in 0..r {
            let total: f64 = self.slices.iter().map(|w| w.column(k).sum()).sum();
            if total > 0.0 {
                for w in &mut self.slices {
                    w.column_mut(k).mapv_inplace(|x| x / total);
                }
            }
        }
    }
}

/// Activation matrix `H`, `r x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub h: Array2<f64>,
}

/// How the activation update walks over shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HUpdateRule {
    /// One multiplicative step whose numerator and denominator sum the
    /// per-shift terms. This is the majorize-minimize step, so the
    /// divergence never increases.
    #[default]
    Joint,
    /// One multiplicative step per shift, in order `t = 0..T`, optionally
    /// recomputing `V~` between shifts. Not guaranteed monotone.
    Sequential { recompute: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnmfConfig {
    pub components: usize,
    pub shifts: usize,
    pub iterations: usize,
    pub threshold: f64,
    pub h_update: HUpdateRule,
    pub seed: u64,
}

impl Default for CnmfConfig {
    fn default() -> Self {
        CnmfConfig {
            components: 4,
            shifts: 4,
            iterations: 100,
            threshold: 0.1,
            h_update: HUpdateRule::Joint,
            seed: 0,
        }
    }
}

impl CnmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.shifts == 0 || self.iterations == 0 {
            return Err(Error::config(
                "cnmf components, shifts and iterations must be >= 1",
            ));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::config("cnmf threshold must be nonnegative"));
        }
        Ok(())
    }
}

/// Shift columns right (`t > 0`) or left (`t < 0`), zero-filling the vacated
/// columns. Shifts of at least the column count give an all-zero matrix.
pub fn shift_columns(m: &Array2<f64>, t: isize) -> Array2<f64> {
    let n = m.ncols();
    let mut out = Array2::zeros(m.dim());
    let k = t.unsigned_abs();
    if k >= n {
        return out;
    }
    if t >= 0 {
        out.slice_mut(s![.., k..]).assign(&m.slice(s![.., ..n - k]));
    } else {
        out.slice_mut(s![.., ..n - k]).assign(&m.slice(s![.., k..]));
    }
    out
}

fn add_shifted(acc: &mut Array2<f64>, m: &Array2<f64>, t: isize) {
    let n = m.ncols();
    let k = t.unsigned_abs();
    if k >= n {
        return;
    }
    if t >= 0 {
        let mut dst = acc.slice_mut(s![.., k..]);
        dst += &m.slice(s![.., ..n - k]);
    } else {
        let mut dst = acc.slice_mut(s![.., ..n - k]);
        dst += &m.slice(s![.., k..]);
    }
}

fn check_dims(b: &ConvolutiveBasis, h: &Activation) -> Result<()> {
    if b.n_components() != h.h.nrows() {
        return Err(Error::shape(format!(
            "basis has {} components, activation has {} rows",
            b.n_components(),
            h.h.nrows()
        )));
    }
    Ok(())
}

/// `V~ = sum_t W(t) * shift(H, +t)`.
pub fn reconstruct(b: &ConvolutiveBasis, h: &Activation) -> Result<Array2<f64>> {
    check_dims(b, h)?;
    Ok(reconstruct_unchecked(b, &h.h))
}

fn reconstruct_unchecked(b: &ConvolutiveBasis, h: &Array2<f64>) -> Array2<f64> {
    let mut v = Array2::zeros((b.n_bins(), h.ncols()));
    for (t, w) in b.slices.iter().enumerate() {
        // W shift(H) == shift(W H)
        add_shifted(&mut v, &w.dot(h), t as isize);
    }
    v
}

/// Generalized KL divergence `sum(V ln(V/V~) - V + V~)`, with `0 ln 0 = 0`.
pub fn kl_divergence(v: &Array2<f64>, approx: &Array2<f64>) -> f64 {
    v.iter()
        .zip(approx.iter())
        .map(|(&x, &y)| {
            if x == 0.0 {
                y
            } else {
                x * (x / y).ln() - x + y
            }
        })
        .sum()
}

fn ratio(v: &Array2<f64>, approx: &Array2<f64>) -> Array2<f64> {
    let mut r = Array2::zeros(v.dim());
    ndarray::Zip::from(&mut r)
        .and(v)
        .and(approx)
        .for_each(|r, &x, &y| {
            *r = if x == 0.0 && y == 0.0 {
                1.0
            } else {
                x / (y + EPS)
            };
        });
    r
}

fn guarded_factor(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / (den + EPS)
    }
}

fn check_target(b: &ConvolutiveBasis, h: &Activation, v: &Array2<f64>) -> Result<()> {
    check_dims(b, h)?;
    if v.dim() != (b.n_bins(), h.h.ncols()) {
        return Err(Error::shape(format!(
            "target is {:?}, factors give {:?}",
            v.dim(),
            (b.n_bins(), h.h.ncols())
        )));
    }
    Ok(())
}

/// Multiplicative update of every `W(t)` against the same `V~`:
/// `W(t) *= (V/V~ . shift(H,t)^T) / (1 . shift(H,t)^T)`.
pub fn update_w(b: &ConvolutiveBasis, h: &Activation, v: &Array2<f64>) -> Result<ConvolutiveBasis> {
    check_target(b, h, v)?;
    Ok(update_w_unchecked(b, &h.h, v))
}

fn update_w_unchecked(b: &ConvolutiveBasis, h: &Array2<f64>, v: &Array2<f64>) -> ConvolutiveBasis {
    let n = h.ncols();
    let r = ratio(v, &reconstruct_unchecked(b, h));
    let slices = b
        .slices
        .iter()
        .enumerate()
        .map(|(t, w)| {
            if t >= n {
                return w.clone();
            }
            // sum_j R[:, j] H[:, j - t]
            let hs = h.slice(s![.., ..n - t]);
            let num = r.slice(s![.., t..]).dot(&hs.t());
            let den: Array1<f64> = hs.sum_axis(Axis(1));
            let mut out = w.clone();
            for ((i, k), x) in out.indexed_iter_mut() {
                *x *= guarded_factor(num[[i, k]], den[k]);
            }
            out
        })
        .collect();
    ConvolutiveBasis { slices }
}

/// Activation update. See [`HUpdateRule`] for the shift schedule; in both
/// rules the denominator only counts columns that the shifted activation
/// actually reaches.
pub fn update_h(
    b: &ConvolutiveBasis,
    h: &Activation,
    v: &Array2<f64>,
    rule: HUpdateRule,
) -> Result<Activation> {
    check_target(b, h, v)?;
    Ok(Activation {
        h: update_h_unchecked(b, &h.h, v, rule),
    })
}

fn update_h_unchecked(
    b: &ConvolutiveBasis,
    h: &Array2<f64>,
    v: &Array2<f64>,
    rule: HUpdateRule,
) -> Array2<f64> {
    let n = h.ncols();
    let col_sums: Vec<Array1<f64>> = b.slices.iter().map(|w| w.sum_axis(Axis(0))).collect();

    // numerator shift(W(t)^T R, -t); denominator colsum(W(t)) on columns j < n - t
    let accumulate = |num: &mut Array2<f64>, den: &mut Array2<f64>, r: &Array2<f64>, t: usize| {
        if t >= n {
            return;
        }
        add_shifted(num, &b.slices[t].t().dot(r), -(t as isize));
        let mut d = den.slice_mut(s![.., ..n - t]);
        for mut col in d.columns_mut() {
            col += &col_sums[t];
        }
    };
    let apply = |h: &mut Array2<f64>, num: &Array2<f64>, den: &Array2<f64>| {
        ndarray::Zip::from(h)
            .and(num)
            .and(den)
            .for_each(|h, &a, &d| *h *= guarded_factor(a, d));
    };

    let mut h = h.clone();
    match rule {
        HUpdateRule::Joint => {
            let r = ratio(v, &reconstruct_unchecked(b, &h));
            let mut num = Array2::zeros(h.dim());
            let mut den = Array2::zeros(h.dim());
            for t in 0..b.n_shifts() {
                accumulate(&mut num, &mut den, &r, t);
            }
            apply(&mut h, &num, &den);
        }
        HUpdateRule::Sequential { recompute } => {
            let mut r = ratio(v, &reconstruct_unchecked(b, &h));
            for t in 0..b.n_shifts() {
                if recompute && t > 0 {
                    r = ratio(v, &reconstruct_unchecked(b, &h));
                }
                let mut num = Array2::zeros(h.dim());
                let mut den = Array2::zeros(h.dim());
                accumulate(&mut num, &mut den, &r, t);
                apply(&mut h, &num, &den);
            }
        }
    }
    h
}

/// Seeded initial factors with entries uniform in (0, 1]. W slices are drawn
/// first (shift-major, row-major), then H.
pub fn init_factors(
    m: usize,
    n: usize,
    components: usize,
    shifts: usize,
    seed: u64,
) -> (ConvolutiveBasis, Activation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows, cols| Array2::from_shape_fn((rows, cols), |_| 1.0 - rng.random::<f64>());
    let slices = (0..shifts).map(|_| draw(m, components)).collect();
    let h = draw(components, n);
    (ConvolutiveBasis { slices }, Activation { h })
}

pub(crate) fn check_nonnegative(v: &Array2<f64>, what: &str) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::NotNonnegative(what.into()));
    }
    Ok(())
}

/// Alternate `update_h` then `update_w` for `cfg.iterations` rounds from a
/// seeded start. `on_step` sees the factors after every full alternation.
pub fn fit_with(
    v: &Array2<f64>,
    cfg: &CnmfConfig,
    mut on_step: impl FnMut(&ConvolutiveBasis, &Activation),
) -> Result<(ConvolutiveBasis, Activation)> {
    cfg.validate()?;
    check_nonnegative(v, "target matrix")?;
    let (mut b, mut h) = init_factors(v.nrows(), v.ncols(), cfg.components, cfg.shifts, cfg.seed);
    for _ in 0..cfg.iterations {
        h.h = update_h_unchecked(&b, &h.h, v, cfg.h_update);
        b = update_w_unchecked(&b, &h.h, v);
        on_step(&b, &h);
    }
    Ok((b, h))
}

pub fn fit(v: &Array2<f64>, cfg: &CnmfConfig) -> Result<(ConvolutiveBasis, Activation)> {
    fit_with(v, cfg, |_, _| {})
}

/// Iterate only the activation update against a fixed basis.
pub(crate) fn fit_activation(
    b: &ConvolutiveBasis,
    v: &Array2<f64>,
    iterations: usize,
    rule: HUpdateRule,
    seed: u64,
) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Array2::from_shape_fn((b.n_components(), v.ncols()), |_| 1.0 - rng.random::<f64>());
    for _ in 0..iterations {
        h = update_h_unchecked(b, &h, v, rule);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn basis(slices: Vec<Array2<f64>>) -> ConvolutiveBasis {
        ConvolutiveBasis::new(slices).unwrap()
    }

    #[test]
    fn shift_examples() {
        let m = array![[1.0, 2.0, 3.0]];
        assert_eq!(shift_columns(&m, 0), m);
        assert_eq!(shift_columns(&m, 1), array![[0.0, 1.0, 2.0]]);
        assert_eq!(shift_columns(&m, -1), array![[2.0, 3.0, 0.0]]);
        assert_eq!(shift_columns(&m, 3), array![[0.0, 0.0, 0.0]]);
        assert_eq!(shift_columns(&m, -7), array![[0.0, 0.0, 0.0]]);
    }

    proptest! {
        #[test]
        fn shift_round_trip_keeps_interior(rows in 1usize..4, cols in 1usize..9, t in 0usize..9, seed in any::<u32>()) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| ((seed as usize + 3 * i + 7 * j) % 11) as f64);
            let back = shift_columns(&shift_columns(&m, t as isize), -(t as isize));
            for j in 0..cols {
                for i in 0..rows {
                    let expect = if j + t < cols { m[[i, j]] } else { 0.0 };
                    prop_assert_eq!(back[[i, j]], expect);
                }
            }
        }
    }

    #[test]
    fn reconstruct_single_shift_is_product() {
        let w = array![[1.0, 2.0], [0.5, 0.0]];
        let h = array![[1.0, 0.0, 2.0], [0.0, 3.0, 1.0]];
        let v = reconstruct(&basis(vec![w.clone()]), &Activation { h: h.clone() }).unwrap();
        assert_eq!(v, w.dot(&h));
    }

    #[test]
    fn reconstruct_planted_two_shift() {
        let b = basis(vec![array![[1.0], [0.0]], array![[0.0], [1.0]]]);
        let v = reconstruct(
            &b,
            &Activation {
                h: array![[1.0, 0.0, 0.0]],
            },
        )
        .unwrap();
        assert_eq!(v, array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn reconstruct_zero_basis_and_mismatch() {
        let b = basis(vec![Array2::zeros((3, 2)); 2]);
        let v = reconstruct(
            &b,
            &Activation {
                h: Array2::ones((2, 5)),
            },
        )
        .unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        assert!(reconstruct(
            &b,
            &Activation {
                h: Array2::ones((3, 5))
            }
        )
        .is_err());
    }

    #[test]
    fn basis_rejects_negative_and_ragged() {
        assert!(ConvolutiveBasis::new(vec![array![[-1.0]]]).is_err());
        assert!(ConvolutiveBasis::new(vec![array![[1.0]], array![[1.0, 2.0]]]).is_err());
        assert!(ConvolutiveBasis::new(vec![]).is_err());
    }

    fn exact_instance() -> (ConvolutiveBasis, Activation, Array2<f64>) {
        let (b, h) = init_factors(6, 10, 2, 3, 42);
        let v = reconstruct(&b, &h).unwrap();
        (b, h, v)
    }

    #[test]
    fn exact_factorization_is_fixed_point() {
        let (b, h, v) = exact_instance();
        let b2 = update_w(&b, &h, &v).unwrap();
        for (x, y) in b
            .slices()
            .iter()
            .flatten()
            .zip(b2.slices().iter().flatten())
        {
            assert!((x - y).abs() <= 1e-9 * x);
        }
        for rule in [
            HUpdateRule::Joint,
            HUpdateRule::Sequential { recompute: true },
        ] {
            let h2 = update_h(&b, &h, &v, rule).unwrap();
            for (x, y) in h.h.iter().zip(h2.h.iter()) {
                assert!((x - y).abs() <= 1e-9 * x);
            }
        }
    }

    #[test]
    fn zero_activation_leaves_basis_unchanged() {
        let (b, _, v) = exact_instance();
        let zero = Activation {
            h: Array2::zeros((2, 10)),
        };
        assert_eq!(update_w(&b, &zero, &v).unwrap(), b);
    }

    fn random_instance(
        m: usize,
        n: usize,
        r: usize,
        t: usize,
        seed: u64,
    ) -> (Array2<f64>, ConvolutiveBasis, Activation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let v = Array2::from_shape_fn((m, n), |_| rng.random::<f64>());
        let (b, h) = init_factors(m, n, r, t, seed);
        (v, b, h)
    }

    #[test]
    fn single_updates_do_not_increase_divergence() {
        let (v, b, h) = random_instance(8, 12, 2, 2, 5);
        let before = kl_divergence(&v, &reconstruct(&b, &h).unwrap());
        let b2 = update_w(&b, &h, &v).unwrap();
        let after_w = kl_divergence(&v, &reconstruct(&b2, &h).unwrap());
        assert!(after_w <= before * (1.0 + 1e-12));
        let mut h = h;
        let mut prev = after_w;
        for _ in 0..50 {
            h = update_h(&b2, &h, &v, HUpdateRule::Joint).unwrap();
            let d = kl_divergence(&v, &reconstruct(&b2, &h).unwrap());
            assert!(d <= prev * (1.0 + 1e-12));
            assert!(h.h.iter().all(|&x| x >= 0.0));
            prev = d;
        }
    }

    #[test]
    fn single_shift_h_update_is_classical_kl_nmf() {
        let (v, b, h) = random_instance(5, 7, 3, 1, 9);
        let w = b.slice(0);
        let approx = w.dot(&h.h);
        let mut expect = h.h.clone();
        for k in 0..3 {
            let den: f64 = w.column(k).sum();
            for j in 0..7 {
                let num: f64 = (0..5)
                    .map(|i| w[[i, k]] * v[[i, j]] / (approx[[i, j]] + EPS))
                    .sum();
                expect[[k, j]] *= num / (den + EPS);
            }
        }
        let got = update_h(&b, &h, &v, HUpdateRule::Joint).unwrap();
        for (x, y) in got.h.iter().zip(expect.iter()) {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
    }

    #[test]
    fn fit_planted_rank_one() {
        let w = Array2::from_shape_fn((8, 1), |(i, _)| 1.0 + i as f64);
        let h = Array2::from_shape_fn((1, 20), |(_, j)| 0.5 + (j % 4) as f64);
        let v = w.dot(&h);
        let cfg = CnmfConfig {
            components: 1,
            shifts: 1,
            iterations: 200,
            ..Default::default()
        };
        let (b, a) = fit(&v, &cfg).unwrap();
        let approx = reconstruct(&b, &a).unwrap();
        let err = (&approx - &v).mapv(|x| x * x).sum().sqrt() / v.mapv(|x| x * x).sum().sqrt();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn fit_zero_target_reaches_zero_divergence() {
        let v = Array2::zeros((4, 6));
        let cfg = CnmfConfig {
            iterations: 1,
            ..Default::default()
        };
        let (b, h) = fit(&v, &cfg).unwrap();
        assert_eq!(kl_divergence(&v, &reconstruct(&b, &h).unwrap()), 0.0);
    }

    #[test]
    fn fit_is_deterministic_and_validates() {
        let (v, _, _) = random_instance(6, 9, 2, 2, 1);
        let cfg = CnmfConfig {
            iterations: 10,
            seed: 77,
            ..Default::default()
        };
        assert_eq!(fit(&v, &cfg).unwrap(), fit(&v, &cfg).unwrap());
        let mut bad = v.clone();
        bad[[0, 0]] = -1.0;
        assert!(matches!(fit(&bad, &cfg), Err(Error::NotNonnegative(_))));
        bad[[0, 0]] = f64::NAN;
        assert!(fit(&bad, &cfg).is_err());
    }

    #[test]
    fn normalize_components_sums_to_one_over_shifts() {
        let (mut b, _) = init_factors(5, 3, 3, 4, 3);
        b.normalize_components();
        for k in 0..3 {
            let s: f64 = b.slices().iter().map(|w| w.column(k).sum()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
