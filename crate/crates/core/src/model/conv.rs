//! 3x3 same-padding convolution, Mish, average pooling.

use ndarray::{Array1, Array2, Array3, Array4, Axis};

use super::ops::{mish, mish_grad};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    /// `[out_ch, in_ch, 3, 3]`
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
    /// `(time_factor, freq_factor)`
    pub pool: (usize, usize),
}

impl ConvBlockParams {
    pub fn zeros(in_ch: usize, out_ch: usize, pool: (usize, usize)) -> Self {
        ConvBlockParams {
            kernel: Array4::zeros((out_ch, in_ch, 3, 3)),
            bias: Array1::zeros(out_ch),
            pool,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim().1
    }

    fn kernel_matrix(&self) -> Array2<f64> {
        let (o, i, _, _) = self.kernel.dim();
        self.kernel
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((o, i * 9))
            .expect("contiguous kernel")
    }
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    in_dim: (usize, usize, usize),
    cols: Array2<f64>,
    pre: Array2<f64>,
}

/// Columns of 3x3 patches: row `c*9 + ki*3 + kj`, column `t*F + f`.
fn im2col(x: &Array3<f64>) -> Array2<f64> {
    let (c, t, f) = x.dim();
    let mut cols = Array2::zeros((c * 9, t * f));
    for ch in 0..c {
        for ki in 0..3 {
            for kj in 0..3 {
                let mut row = cols.row_mut(ch * 9 + ki * 3 + kj);
                let row = row.as_slice_mut().expect("row-major");
                for ti in 0..t {
                    let src_t = ti as isize + ki as isize - 1;
                    if src_t < 0 || src_t >= t as isize {
                        continue;
                    }
                    let src = x.slice(ndarray::s![ch, src_t as usize, ..]);
                    let dst = &mut row[ti * f..(ti + 1) * f];
                    for fi in 0..f {
                        let src_f = fi as isize + kj as isize - 1;
                        if src_f >= 0 && src_f < f as isize {
                            dst[fi] = src[src_f as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, dim: (usize, usize, usize)) -> Array3<f64> {
    let (c, t, f) = dim;
    let mut x = Array3::zeros(dim);
    for ch in 0..c {
        for ki in 0..3 {
            for kj in 0..3 {
                let row = cols.row(ch * 9 + ki * 3 + kj);
                for ti in 0..t {
                    let src_t = ti as isize + ki as isize - 1;
                    if src_t < 0 || src_t >= t as isize {
                        continue;
                    }
                    for fi in 0..f {
                        let src_f = fi as isize + kj as isize - 1;
                        if src_f >= 0 && src_f < f as isize {
                            x[[ch, src_t as usize, src_f as usize]] += row[ti * f + fi];
                        }
                    }
                }
            }
        }
    }
    x
}

fn check_block(x: &Array3<f64>, p: &ConvBlockParams) -> Result<()> {
    let (c, t, f) = x.dim();
    if c != p.in_channels() {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {c}",
            p.in_channels()
        )));
    }
    let (pt, pf) = p.pool;
    if pt == 0 || pf == 0 || t % pt != 0 || f % pf != 0 {
        return Err(Error::shape(format!(
            "pool {:?} does not divide {t}x{f}",
            p.pool
        )));
    }
    Ok(())
}

/// Convolution, Mish, average pooling. Input and output are
/// `[channels, time, freq]`.
pub fn conv_block_forward(
    x: &Array3<f64>,
    p: &ConvBlockParams,
) -> Result<(Array3<f64>, ConvCache)> {
    check_block(x, p)?;
    let (_, t, f) = x.dim();
    let cols = im2col(x);
    let mut pre = p.kernel_matrix().dot(&cols);
    for (mut row, &b) in pre.rows_mut().into_iter().zip(p.bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    let (pt, pf) = p.pool;
    let o = p.out_channels();
    let (tp, fp) = (t / pt, f / pf);
    let scale = 1.0 / (pt * pf) as f64;
    let mut out = Array3::zeros((o, tp, fp));
    for ch in 0..o {
        let row = pre.row(ch);
        for ti in 0..t {
            for fi in 0..f {
                out[[ch, ti / pt, fi / pf]] += mish(row[ti * f + fi]) * scale;
            }
        }
    }
    Ok((
        out,
        ConvCache {
            in_dim: x.dim(),
            cols,
            pre,
        },
    ))
}

/// Returns `(dx, grads)`; `dx` is skipped when `need_dx` is false.
pub fn conv_block_backward(
    dout: &Array3<f64>,
    cache: &ConvCache,
    p: &ConvBlockParams,
    need_dx: bool,
) -> (Option<Array3<f64>>, ConvBlockParams) {
    let (_, t, f) = cache.in_dim;
    let (pt, pf) = p.pool;
    let scale = 1.0 / (pt * pf) as f64;
    let mut dpre = cache.pre.clone();
    for (ch, mut row) in dpre.rows_mut().into_iter().enumerate() {
        for ti in 0..t {
            for fi in 0..f {
                let k = ti * f + fi;
                row[k] = dout[[ch, ti / pt, fi / pf]] * scale * mish_grad(row[k]);
            }
        }
    }
    let (o, i, _, _) = p.kernel.dim();
    let dk = dpre.dot(&cache.cols.t());
    let grads = ConvBlockParams {
        kernel: dk.into_shape_with_order((o, i, 3, 3)).expect("contiguous"),
        bias: dpre.sum_axis(Axis(1)),
        pool: p.pool,
    };
    let dx = need_dx.then(|| col2im(&p.kernel_matrix().t().dot(&dpre), cache.in_dim));
    (dx, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dim: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel_gives_mish_of_input() {
        let mut p = ConvBlockParams::zeros(1, 1, (1, 1));
        p.kernel[[0, 0, 1, 1]] = 1.0;
        let x = random((1, 5, 4), 1).mapv(f64::abs);
        let (y, _) = conv_block_forward(&x, &p).unwrap();
        for (a, b) in y.iter().zip(x.iter()) {
            assert_eq!(*a, mish(*b));
        }
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let p = ConvBlockParams::zeros(2, 3, (2, 2));
        let (y, _) = conv_block_forward(&random((2, 4, 4), 2), &p).unwrap();
        assert_eq!(y.dim(), (3, 2, 2));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_nine_term_sum() {
        let x = random((1, 8, 8), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ConvBlockParams::zeros(1, 2, (1, 1));
        p.kernel.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        p.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let (y, _) = conv_block_forward(&x, &p).unwrap();
        for o in 0..2 {
            for t in 0..8 {
                for f in 0..8 {
                    let mut acc = p.bias[o];
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let (a, b) =
                                (t as isize + ki as isize - 1, f as isize + kj as isize - 1);
                            if (0..8).contains(&a) && (0..8).contains(&b) {
                                acc += p.kernel[[o, 0, ki, kj]] * x[[0, a as usize, b as usize]];
                            }
                        }
                    }
                    assert!((y[[o, t, f]] - mish(acc)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_pool_and_channels() {
        let p = ConvBlockParams::zeros(1, 1, (3, 1));
        assert!(conv_block_forward(&random((1, 8, 8), 0), &p).is_err());
        let p = ConvBlockParams::zeros(2, 1, (1, 1));
        assert!(conv_block_forward(&random((1, 8, 8), 0), &p).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let x = random((2, 5, 3), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = Array2::from_shape_fn((18, 15), |_| rng.random_range(-1.0..1.0));
        let lhs = (&im2col(&x) * &c).sum();
        let rhs = (&col2im(&c, x.dim()) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
