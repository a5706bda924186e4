//! Learning-rate schedules, Adam and the Lookahead wrapper.

use crate::error::{Error, Result};
use crate::losses::cosine_down;
use crate::model::CmnParameters;

/// Cosine ramp from `lr_min` at `t_curr = 0` up to `lr_max` at `t_i`.
pub fn lr_warmup(t_curr: f64, t_i: f64, lr_min: f64, lr_max: f64) -> f64 {
    cosine_down(t_i - t_curr, t_i, lr_min, lr_max)
}

/// Cosine decay from `lr_max` at `t_curr = 0` down to `lr_min` at `t_i`.
pub fn lr_decay(t_curr: f64, t_i: f64, lr_min: f64, lr_max: f64) -> f64 {
    cosine_down(t_curr, t_i, lr_min, lr_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: CmnParameters,
    pub v: CmnParameters,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &CmnParameters) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut CmnParameters,
    grads: &CmnParameters,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for t in grads.tensors() {
        if let Some(bad) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} at element {bad}",
                t.name
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let g = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&g).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookaheadConfig {
    pub alpha: f64,
    pub k: u64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        LookaheadConfig { alpha: 0.5, k: 20 }
    }
}

/// On every `k`-th step moves the slow weights toward the fast ones and
/// resets the fast weights to them. Returns whether a sync happened.
pub fn lookahead_sync(
    fast: &mut CmnParameters,
    slow: &mut CmnParameters,
    cfg: &LookaheadConfig,
    step: u64,
) -> bool {
    if cfg.k == 0 || step == 0 || step % cfg.k != 0 {
        return false;
    }
    let alpha = cfg.alpha;
    if alpha == 1.0 {
        slow.clone_from(fast);
    } else {
        slow.zip_apply(fast, |s, f| s + alpha * (f - s));
    }
    *fast = slow.clone();
    true
}

/// Adam state plus Lookahead slow weights for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub adam: AdamState,
    pub slow: CmnParameters,
}

impl OptimizerState {
    pub fn new(params: &CmnParameters) -> Self {
        OptimizerState {
            adam: AdamState::new(params),
            slow: params.clone(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut CmnParameters,
        grads: &CmnParameters,
        lr: f64,
        adam: &AdamConfig,
        lookahead: &LookaheadConfig,
    ) -> Result<()> {
        adam_step(params, grads, &mut self.adam, lr, adam)?;
        lookahead_sync(params, &mut self.slow, lookahead, self.adam.step);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig, Variant};

    fn tiny() -> CmnParameters {
        let cfg = ModelConfig {
            variant: Variant::Flm,
            n_frames: 8,
            n_mels: 4,
            filters: vec![2],
            pools: vec![(1, 4)],
            layers: 1,
            heads: 1,
            n_classes: 3,
            positional_encoding: false,
            half_step: 0.5,
        };
        init_params(&cfg, 1).unwrap()
    }

    fn filled(p: &CmnParameters, v: f64) -> CmnParameters {
        let mut q = p.zeros_like();
        q.zip_apply(p, |_, _| v);
        q
    }

    #[test]
    fn lr_endpoints() {
        assert!((lr_warmup(0.0, 50.0, 1e-6, 0.0014) - 1e-6).abs() < 1e-12);
        assert!((lr_warmup(50.0, 50.0, 1e-6, 0.0014) - 0.0014).abs() < 1e-12);
        assert!((lr_warmup(25.0, 50.0, 1e-6, 0.0014) - 0.0007005).abs() < 1e-12);
        assert!((lr_decay(0.0, 50.0, 1e-6, 0.0014) - 0.0014).abs() < 1e-12);
        assert!((lr_decay(50.0, 50.0, 1e-6, 0.0014) - 1e-6).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for t in 0..=50 {
            let lr = lr_decay(t as f64, 50.0, 1e-6, 0.0014);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny();
        let orig = p.clone();
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = tiny();
        let orig = p.clone();
        let g = filled(&p, -0.3);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.01, &AdamConfig::default()).unwrap();
        let want = 0.01 * 0.3 / (0.3 + 1e-8);
        for (a, b) in p.tensors().iter().zip(orig.tensors().iter()) {
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                assert!((x - y - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = tiny();
        let g = filled(&p, f64::NAN);
        let mut s = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, 0.01, &AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn lookahead_examples() {
        let base = tiny();
        let cfg = LookaheadConfig { alpha: 0.5, k: 3 };
        let mut slow = filled(&base, 0.0);
        let mut fast = filled(&base, 2.0);
        assert!(!lookahead_sync(&mut fast, &mut slow, &cfg, 2));
        assert_eq!(fast, filled(&base, 2.0));
        assert!(lookahead_sync(&mut fast, &mut slow, &cfg, 3));
        assert_eq!(fast, filled(&base, 1.0));
        assert_eq!(slow, filled(&base, 1.0));

        let full = LookaheadConfig { alpha: 1.0, k: 3 };
        let mut slow = filled(&base, 0.0);
        let mut fast = filled(&base, 2.0);
        lookahead_sync(&mut fast, &mut slow, &full, 3);
        assert_eq!(slow, filled(&base, 2.0));

        let mut slow = filled(&base, 0.7);
        let mut fast = slow.clone();
        lookahead_sync(&mut fast, &mut slow, &cfg, 3);
        assert_eq!(fast, filled(&base, 0.7));
    }

    #[test]
    fn unit_lookahead_is_plain_adam() {
        let mut a = tiny();
        let mut b = a.clone();
        let mut sa = AdamState::new(&a);
        let mut sb = OptimizerState::new(&b);
        let la = LookaheadConfig { alpha: 1.0, k: 1 };
        for step in 0..5 {
            let g = filled(&a, 0.1 * (step as f64 - 2.0));
            adam_step(&mut a, &g, &mut sa, 0.01, &AdamConfig::default()).unwrap();
            sb.step(&mut b, &g, 0.01, &AdamConfig::default(), &la)
                .unwrap();
        }
        assert_eq!(a, b);
    }
}
