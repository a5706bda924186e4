//! Supervised and consistency losses, confidence and ramp schedules, mixup.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::{Array, Array1, Array2, Dimension, Zip};
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::model::{temporal_max_pool, temporal_max_pool_backward};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside [`bce`].
pub const BCE_CLAMP: f64 = 1e-7;

fn clamp_p(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

fn same_shape<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross entropy over all elements.
pub fn bce<D: Dimension>(p: &Array<f64, D>, y: &Array<f64, D>) -> Result<f64> {
    same_shape(p, y, "bce")?;
    let n = p.len().max(1) as f64;
    let sum = Zip::from(p).and(y).fold(0.0, |acc, &p, &y| {
        let p = clamp_p(p);
        acc - (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    });
    Ok(sum / n)
}

/// Derivative of [`bce`] with respect to `p`, evaluated at the clamped
/// probability so that chaining through a sigmoid yields `(p - y) / n`.
pub fn bce_grad<D: Dimension>(p: &Array<f64, D>, y: &Array<f64, D>) -> Result<Array<f64, D>> {
    same_shape(p, y, "bce")?;
    let n = p.len().max(1) as f64;
    Ok(Zip::from(p).and(y).map_collect(|&p, &y| {
        let p = clamp_p(p);
        (p - y) / (p * (1.0 - p)) / n
    }))
}

pub fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
        / n
}

/// Gradient of [`mse`] with respect to `a`.
pub fn mse_grad(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = a.len().max(1) as f64;
    (a - b) * (2.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumConfig {
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// Total iterations of the tuning phase.
    pub total_iters: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            lambda_max: 0.9,
            lambda_min: 0.6,
            total_iters: 1,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lambda_min && self.lambda_min <= self.lambda_max && self.lambda_max <= 1.0)
        {
            return Err(Error::config(format!(
                "need 0 <= lambda_min ({}) <= lambda_max ({}) <= 1",
                self.lambda_min, self.lambda_max
            )));
        }
        Ok(())
    }
}

/// Cosine interpolation from `hi` at `t = 0` to `lo` at `t = total`.
pub(crate) fn cosine_down(t: f64, total: f64, lo: f64, hi: f64) -> f64 {
    let frac = if total > 0.0 {
        (t / total).clamp(0.0, 1.0)
    } else {
        1.0
    };
    lo + 0.5 * (hi - lo) * (1.0 + (PI * frac).cos())
}

/// Confidence threshold at iteration `t_curr` of the tuning phase.
pub fn lambda_curr(t_curr: f64, cfg: &CurriculumConfig) -> f64 {
    cosine_down(
        t_curr,
        cfg.total_iters as f64,
        cfg.lambda_min,
        cfg.lambda_max,
    )
}

/// `exp(-5 (1 - t_curr / t_i))`.
pub fn ramp_weight(t_curr: f64, t_i: f64) -> f64 {
    let frac = if t_i > 0.0 {
        (t_curr / t_i).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (-5.0 * (1.0 - frac)).exp()
}

/// Strict gate: the most confident class must exceed `lambda`.
pub fn gate_open(clm_c: &Array1<f64>, lambda: f64) -> bool {
    clm_c.iter().copied().fold(f64::NEG_INFINITY, f64::max) > lambda
}

/// Per-sample curriculum consistency: MSE if the gate is open, else 0.
pub fn curriculum_consistency(flm_c: &Array1<f64>, clm_c: &Array1<f64>, lambda: f64) -> f64 {
    if gate_open(clm_c, lambda) {
        mse(flm_c, clm_c)
    } else {
        0.0
    }
}

/// Per-sample interpolated consistency, `w * MSE` behind the same gate.
pub fn interpolated_consistency(
    flm_uc: &Array1<f64>,
    clm_uc: &Array1<f64>,
    lambda: f64,
    w: f64,
) -> f64 {
    if gate_open(clm_uc, lambda) {
        w * mse(flm_uc, clm_uc)
    } else {
        0.0
    }
}

pub fn mixup<D: Dimension>(
    u1: &Array<f64, D>,
    u2: &Array<f64, D>,
    lam: f64,
) -> Result<Array<f64, D>> {
    same_shape(u1, u2, "mixup")?;
    Ok(Zip::from(u1)
        .and(u2)
        .map_collect(|&a, &b| lam * a + (1.0 - lam) * b))
}

/// Draws a mixing coefficient from `Beta(alpha, alpha)`.
pub fn sample_mix_coefficient<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta =
        Beta::new(alpha, alpha).map_err(|e| Error::config(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Tuning,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Tuning => "tuning",
        }
    }
}

/// Model outputs and targets for one labeled clip.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    /// FLM frame probabilities `[frames x classes]`.
    pub flm_frames: Array2<f64>,
    /// CLM clip probabilities.
    pub clm_clip: Array1<f64>,
    pub frame_target: Array2<f64>,
    pub clip_target: Array1<f64>,
}

/// Model outputs for one mixed pair of unlabeled clips.
#[derive(Debug, Clone)]
pub struct UnlabeledSample {
    /// FLM frame probabilities on the mixed input.
    pub flm_mixed_frames: Array2<f64>,
    /// Mixture of the CLM clip predictions on the two inputs.
    pub clm_mixed: Array1<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_f: f64,
    pub l_c: f64,
    pub l_con: f64,
    pub l_inter: f64,
    pub total: f64,
    pub gates_con: usize,
    pub gates_inter: usize,
}

impl LossBreakdown {
    pub fn gates_fired(&self) -> usize {
        self.gates_con + self.gates_inter
    }
}

/// Which terms enter the total; used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub con: bool,
    pub inter: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            con: true,
            inter: true,
        }
    }
}

/// Batch loss. Gated terms average over samples whose gate is open.
pub fn total_loss(
    labeled: &[LabeledSample],
    unlabeled: &[UnlabeledSample],
    phase: Phase,
    lambda: f64,
    w: f64,
    terms: LossTerms,
) -> Result<LossBreakdown> {
    if phase == Phase::Warmup && !unlabeled.is_empty() {
        return Err(Error::config(
            "warm-up batches may not contain unlabeled clips",
        ));
    }
    let mut b = LossBreakdown::default();
    if !labeled.is_empty() {
        let n = labeled.len() as f64;
        let mut con_sum = 0.0;
        for s in labeled {
            b.l_f += bce(&s.flm_frames, &s.frame_target)? / n;
            b.l_c += bce(&s.clm_clip, &s.clip_target)? / n;
            if terms.con && gate_open(&s.clm_clip, lambda) {
                b.gates_con += 1;
                con_sum += mse(&temporal_max_pool(&s.flm_frames), &s.clm_clip);
            }
        }
        if b.gates_con > 0 {
            b.l_con = con_sum / b.gates_con as f64;
        }
    }
    if terms.inter && phase == Phase::Tuning {
        let mut sum = 0.0;
        for s in unlabeled {
            if gate_open(&s.clm_mixed, lambda) {
                b.gates_inter += 1;
                sum += w * mse(&temporal_max_pool(&s.flm_mixed_frames), &s.clm_mixed);
            }
        }
        if b.gates_inter > 0 {
            b.l_inter = sum / b.gates_inter as f64;
        }
    }
    b.total = b.l_f + b.l_c + b.l_con + b.l_inter;
    Ok(b)
}

/// Gradients of the batch loss with respect to one labeled clip's FLM frame
/// and CLM clip outputs. `con_weight` is `1 / n_gated` when this clip's
/// gate is open and `None` otherwise.
pub fn labeled_output_grads(
    s: &LabeledSample,
    n_labeled: usize,
    con_weight: Option<f64>,
    bidirectional: bool,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = n_labeled.max(1) as f64;
    let mut dframes = bce_grad(&s.flm_frames, &s.frame_target)? / n;
    let mut dclip = bce_grad(&s.clm_clip, &s.clip_target)? / n;
    if let Some(cw) = con_weight {
        let flm_c = temporal_max_pool(&s.flm_frames);
        let g = mse_grad(&flm_c, &s.clm_clip) * cw;
        dframes += &temporal_max_pool_backward(&s.flm_frames, &g);
        if bidirectional {
            dclip -= &g;
        }
    }
    Ok((dframes, dclip))
}

/// Gradients of the batch loss with respect to one mixed pair's FLM frames
/// and mixed CLM target; `weight` is `w / n_gated`, zero for closed gates.
pub fn unlabeled_output_grads(s: &UnlabeledSample, weight: f64) -> (Array2<f64>, Array1<f64>) {
    let flm_uc = temporal_max_pool(&s.flm_mixed_frames);
    let g = mse_grad(&flm_uc, &s.clm_mixed) * weight;
    (temporal_max_pool_backward(&s.flm_mixed_frames, &g), -g)
}

pub const LOG_HEADER: &str = "iteration,phase,lr,lambda,w,l_f,l_c,l_con,l_inter,total,gates_fired";

/// One training-log CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub phase: Phase,
    pub lr: f64,
    pub lambda: f64,
    pub w: f64,
    pub losses: LossBreakdown,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        let mut s = String::new();
        write!(
            s,
            "{},{},{:e},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.phase.name(),
            self.lr,
            self.lambda,
            self.w,
            l.l_f,
            l.l_c,
            l.l_con,
            l.l_inter,
            l.total,
            l.gates_fired()
        )
        .expect("write to string");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bce_examples() {
        let p = Array2::from_elem((4, 3), 0.5);
        let y = Array2::from_shape_fn((4, 3), |(i, j)| ((i + j) % 2) as f64);
        assert!(close(bce(&p, &y).unwrap(), 2f64.ln(), 1e-15));
        let y = array![1.0, 0.0];
        assert!(bce(&y, &y).unwrap() < 2e-7);
        let v = bce(&array![0.9, 0.1], &y).unwrap();
        assert!(close(v, -(0.9f64.ln()), 1e-15));
        assert!(bce(&array![0.5], &array![0.5, 0.5]).is_err());
    }

    #[test]
    fn bce_grad_through_sigmoid_is_p_minus_y() {
        let p = array![0.2, 0.7, 0.5];
        let y = array![0.0, 1.0, 0.5];
        let g = bce_grad(&p, &y).unwrap();
        for i in 0..3 {
            let chained = g[i] * p[i] * (1.0 - p[i]);
            assert!(close(chained, (p[i] - y[i]) / 3.0, 1e-15));
        }
        assert_eq!(bce_grad(&array![0.3], &array![0.3]).unwrap()[0], 0.0);
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = CurriculumConfig {
            total_iters: 200,
            ..Default::default()
        };
        assert!(close(lambda_curr(0.0, &cfg), 0.9, 1e-12));
        assert!(close(lambda_curr(200.0, &cfg), 0.6, 1e-12));
        assert!(close(lambda_curr(100.0, &cfg), 0.75, 1e-12));
        assert!(close(ramp_weight(200.0, 200.0), 1.0, 1e-12));
        assert!(close(ramp_weight(0.0, 200.0), (-5f64).exp(), 1e-12));
        assert!(close(ramp_weight(100.0, 200.0), (-2.5f64).exp(), 1e-12));
        assert!(close(ramp_weight(0.0, 200.0), 0.0067379, 1e-7));
    }

    #[test]
    fn curriculum_examples() {
        let mut c = Array1::zeros(10);
        c[0] = 0.95;
        assert_eq!(curriculum_consistency(&c, &c, 0.9), 0.0);
        let mut low = Array1::zeros(10);
        low[0] = 0.85;
        assert_eq!(curriculum_consistency(&(&low + 0.1), &low, 0.9), 0.0);
        let mut f = Array1::zeros(10);
        f[0] = 1.0;
        assert!(close(mse(&f, &Array1::zeros(10)), 0.1, 1e-15));
        assert!(close(
            curriculum_consistency(&f, &Array1::zeros(10), -1.0),
            0.1,
            1e-15
        ));
    }

    #[test]
    fn interpolated_examples() {
        let mut c = Array1::from_elem(10, 0.3);
        assert_eq!(interpolated_consistency(&(&c + 0.2), &c, 0.9, 1.0), 0.0);
        c[2] = 0.95;
        assert_eq!(interpolated_consistency(&c, &c, 0.5, 1.0), 0.0);
        let v = interpolated_consistency(&(&c + 0.2), &c, 0.5, 1.0);
        assert!(close(v, 0.04, 1e-15));
    }

    #[test]
    fn mixup_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0, 0.0], [1.0, 0.0]];
        assert_eq!(mixup(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mixup(&a, &b, 0.5).unwrap(), array![[3.0, 1.0], [2.0, 2.0]]);
        assert_eq!(mixup(&a, &a, 0.37).unwrap(), a);
        assert!(mixup(&a, &array![[1.0]], 0.5).is_err());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let l = sample_mix_coefficient(1.0, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&l));
        }
        assert!(sample_mix_coefficient(0.0, &mut rng).is_err());
    }

    fn labeled(flm: f64, clm: f64, y: f64) -> LabeledSample {
        LabeledSample {
            flm_frames: Array2::from_elem((4, 3), flm),
            clm_clip: Array1::from_elem(3, clm),
            frame_target: Array2::from_elem((4, 3), y),
            clip_target: Array1::from_elem(3, y),
        }
    }

    #[test]
    fn warmup_rejects_unlabeled() {
        let u = UnlabeledSample {
            flm_mixed_frames: Array2::from_elem((4, 3), 0.5),
            clm_mixed: Array1::from_elem(3, 0.5),
        };
        assert!(total_loss(&[], &[u], Phase::Warmup, 0.9, 1.0, LossTerms::default()).is_err());
    }

    #[test]
    fn closed_gates_leave_supervised_terms() {
        let l = [labeled(0.3, 0.4, 1.0), labeled(0.6, 0.2, 0.0)];
        let u = [UnlabeledSample {
            flm_mixed_frames: Array2::from_elem((4, 3), 0.9),
            clm_mixed: Array1::from_elem(3, 0.5),
        }];
        let b = total_loss(&l, &u, Phase::Tuning, 0.9, 1.0, LossTerms::default()).unwrap();
        assert_eq!(b.l_con, 0.0);
        assert_eq!(b.l_inter, 0.0);
        assert_eq!(b.gates_fired(), 0);
        assert_eq!(b.total, b.l_f + b.l_c);
    }

    #[test]
    fn perfect_predictions_are_near_zero() {
        let l = [labeled(1.0, 1.0, 1.0), labeled(0.0, 0.0, 0.0)];
        let b = total_loss(&l, &[], Phase::Warmup, 0.9, 1.0, LossTerms::default()).unwrap();
        assert!(b.total < 1e-6);
    }

    #[test]
    fn crafted_batch_matches_hand_sum() {
        let l = [labeled(0.8, 0.95, 1.0), labeled(0.3, 0.5, 0.0)];
        let u = [
            UnlabeledSample {
                flm_mixed_frames: Array2::from_elem((4, 3), 0.6),
                clm_mixed: Array1::from_elem(3, 0.7),
            },
            UnlabeledSample {
                flm_mixed_frames: Array2::from_elem((4, 3), 0.1),
                clm_mixed: Array1::from_elem(3, 0.2),
            },
        ];
        let (lambda, w) = (0.65, 0.5);
        let b = total_loss(&l, &u, Phase::Tuning, lambda, w, LossTerms::default()).unwrap();
        let l_f = (-(0.8f64.ln()) + -(0.7f64.ln())) / 2.0;
        let l_c = (-(0.95f64.ln()) + -(0.5f64.ln())) / 2.0;
        // only the first labeled clip and the first pair pass the gate
        let l_con = (0.8f64 - 0.95).powi(2);
        let l_inter = w * (0.6f64 - 0.7).powi(2);
        assert!(close(b.l_f, l_f, 1e-12));
        assert!(close(b.l_c, l_c, 1e-12));
        assert!(close(b.l_con, l_con, 1e-12));
        assert!(close(b.l_inter, l_inter, 1e-12));
        assert!(close(b.total, l_f + l_c + l_con + l_inter, 1e-12));
        assert_eq!((b.gates_con, b.gates_inter), (1, 1));

        let off = LossTerms {
            con: false,
            inter: false,
        };
        let b = total_loss(&l, &u, Phase::Tuning, lambda, w, off).unwrap();
        assert!(close(b.total, l_f + l_c, 1e-12));
    }

    #[test]
    fn log_row_has_header_arity() {
        let row = LogRow {
            iteration: 3,
            phase: Phase::Tuning,
            lr: 1e-3,
            lambda: 0.8,
            w: 0.1,
            losses: LossBreakdown::default(),
        };
        assert_eq!(
            row.to_csv().split(',').count(),
            LOG_HEADER.split(',').count()
        );
    }

    #[test]
    fn output_grads_match_finite_differences() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rnd = |r: usize, c: usize, lo: f64, hi: f64| {
            Array2::from_shape_fn((r, c), |_| rng.random_range(lo..hi))
        };
        let mut lab: Vec<LabeledSample> = (0..3)
            .map(|_| LabeledSample {
                flm_frames: rnd(6, 4, 0.05, 0.95),
                clm_clip: rnd(1, 4, 0.05, 0.6).row(0).to_owned(),
                frame_target: rnd(6, 4, 0.0, 1.0).mapv(f64::round),
                clip_target: rnd(1, 4, 0.0, 1.0).row(0).mapv(f64::round),
            })
            .collect();
        lab[0].clm_clip[1] = 0.9;
        lab[2].clm_clip[3] = 0.85;
        let mut unl: Vec<UnlabeledSample> = (0..2)
            .map(|_| UnlabeledSample {
                flm_mixed_frames: rnd(6, 4, 0.05, 0.95),
                clm_mixed: rnd(1, 4, 0.05, 0.6).row(0).to_owned(),
            })
            .collect();
        unl[1].clm_mixed[0] = 0.8;
        let (lambda, w) = (0.7, 0.3);
        let loss = |l: &[LabeledSample], u: &[UnlabeledSample]| {
            total_loss(l, u, Phase::Tuning, lambda, w, LossTerms::default())
                .unwrap()
                .total
        };
        let h = 1e-6;
        let fd = |i: usize, f: &dyn Fn(&mut LabeledSample, f64)| {
            let mut p = lab.clone();
            f(&mut p[i], h);
            let mut m = lab.clone();
            f(&mut m[i], -h);
            (loss(&p, &unl) - loss(&m, &unl)) / (2.0 * h)
        };
        let n_con = lab
            .iter()
            .filter(|s| gate_open(&s.clm_clip, lambda))
            .count();
        for (i, s) in lab.iter().enumerate() {
            let cw = gate_open(&s.clm_clip, lambda).then(|| 1.0 / n_con as f64);
            let (df, dc) = labeled_output_grads(s, 3, cw, true).unwrap();
            for t in 0..6 {
                for c in 0..4 {
                    let num = fd(i, &|x, d| x.flm_frames[[t, c]] += d);
                    assert!((num - df[[t, c]]).abs() < 1e-6, "frame {i} {t} {c}");
                }
            }
            for c in 0..4 {
                let num = fd(i, &|x, d| x.clm_clip[c] += d);
                assert!((num - dc[c]).abs() < 1e-6, "clip {i} {c}");
            }
        }
        let n_inter = unl
            .iter()
            .filter(|s| gate_open(&s.clm_mixed, lambda))
            .count();
        for (j, s) in unl.iter().enumerate() {
            let wt = if gate_open(&s.clm_mixed, lambda) {
                w / n_inter as f64
            } else {
                0.0
            };
            let (df, dc) = unlabeled_output_grads(s, wt);
            for t in 0..6 {
                for c in 0..4 {
                    let mut p = unl.clone();
                    p[j].flm_mixed_frames[[t, c]] += h;
                    let mut m = unl.clone();
                    m[j].flm_mixed_frames[[t, c]] -= h;
                    let num = (loss(&lab, &p) - loss(&lab, &m)) / (2.0 * h);
                    assert!((num - df[[t, c]]).abs() < 1e-6);
                }
            }
            for c in 0..4 {
                let mut p = unl.clone();
                p[j].clm_mixed[c] += h;
                let mut m = unl.clone();
                m[j].clm_mixed[c] -= h;
                let num = (loss(&lab, &p) - loss(&lab, &m)) / (2.0 * h);
                assert!((num - dc[c]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn schedules_are_monotone(a in 0usize..=500, b in 0usize..=500) {
            let cfg = CurriculumConfig { total_iters: 500, ..Default::default() };
            let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
            prop_assert!(lambda_curr(lo, &cfg) >= lambda_curr(hi, &cfg));
            prop_assert!(ramp_weight(lo, 500.0) <= ramp_weight(hi, 500.0));
        }

        #[test]
        fn inter_never_exceeds_w(
            f in proptest::collection::vec(0.0f64..1.0, 10),
            c in proptest::collection::vec(0.0f64..1.0, 10),
            w in 0.0f64..1.0,
        ) {
            let v = interpolated_consistency(&Array1::from(f), &Array1::from(c), 0.0, w);
            prop_assert!(v <= w);
        }
    }
}
