//! Feature-space augmentation: Gaussian noise, time masks, frequency masks.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AugmentKind {
    Noise,
    TimeMask,
    FreqMask,
}

pub const LABELED_AUGMENTS: &[AugmentKind] = &[
    AugmentKind::Noise,
    AugmentKind::TimeMask,
    AugmentKind::FreqMask,
];
pub const UNLABELED_AUGMENTS: &[AugmentKind] = &[AugmentKind::Noise];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Noise standard deviation relative to the clip's feature std.
    pub noise_scale: f64,
    pub max_time_mask: usize,
    pub max_freq_mask: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_scale: 0.1,
            max_time_mask: 20,
            max_freq_mask: 8,
        }
    }
}

/// Zeroes frames `start..start + len` (clipped to the clip).
pub fn mask_time(m: &mut Array2<f64>, start: usize, len: usize) {
    let end = (start + len).min(m.nrows());
    if start < end {
        m.slice_mut(s![start..end, ..]).fill(0.0);
    }
}

/// Zeroes bins `start..start + len` (clipped).
pub fn mask_freq(m: &mut Array2<f64>, start: usize, len: usize) {
    let end = (start + len).min(m.ncols());
    if start < end {
        m.slice_mut(s![.., start..end]).fill(0.0);
    }
}

fn random_span<R: Rng + ?Sized>(rng: &mut R, total: usize, max_len: usize) -> (usize, usize) {
    let len = rng.random_range(0..=max_len.min(total));
    let start = rng.random_range(0..=total - len);
    (start, len)
}

/// Applies `kinds` in the order given. Features are `[frames x bins]`.
pub fn augment<R: Rng + ?Sized>(
    m: &Array2<f64>,
    kinds: &[AugmentKind],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Array2<f64> {
    let mut out = m.clone();
    for kind in kinds {
        match kind {
            AugmentKind::Noise => {
                let std = out.std(0.0) * cfg.noise_scale;
                if std > 0.0 && std.is_finite() {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    out.mapv_inplace(|v| v + normal.sample(rng));
                }
            }
            AugmentKind::TimeMask => {
                let (start, len) = random_span(rng, out.nrows(), cfg.max_time_mask);
                mask_time(&mut out, start, len);
            }
            AugmentKind::FreqMask => {
                let (start, len) = random_span(rng, out.ncols(), cfg.max_freq_mask);
                mask_freq(&mut out, start, len);
            }
        }
    }
    out
}
