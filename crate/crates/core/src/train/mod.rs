//! Two-phase training of the FLM/CLM pair.

pub mod augment;
pub mod batch;
pub mod optim;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, mask_freq, mask_time, AugmentConfig, AugmentKind};
pub use batch::{compose_epoch, iterations_per_epoch, Batch, LabeledRef, PoolSizes};
pub use optim::{
    adam_step, lookahead_sync, lr_decay, lr_warmup, AdamConfig, AdamState, LookaheadConfig,
    OptimizerState,
};

use crate::data::{ClassMap, Event};
use crate::error::{Error, Result};
use crate::eval::{detect_events, event_based_scores, DecodeConfig, MetricConfig};
use crate::losses::{
    gate_open, labeled_output_grads, lambda_curr, mixup, ramp_weight, sample_mix_coefficient,
    total_loss, unlabeled_output_grads, CurriculumConfig, LabeledSample, LogRow, LossBreakdown,
    LossTerms, Phase, UnlabeledSample, LOG_HEADER,
};
use crate::model::{backward, clm_forward, forward, read_model, write_model, CmnParameters};
use crate::parallel::{self, Execution};
use crate::tensor_io::TensorFile;

/// SplitMix64 over the seed and a list of tags.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(t);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z = x ^ (x >> 31);
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub tuning_epochs: usize,
    pub batch_warmup: usize,
    pub batch_tuning: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub adam: AdamConfig,
    pub lookahead: LookaheadConfig,
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// Fixed confidence threshold during warm-up.
    pub warmup_lambda: f64,
    /// Replaces the cosine threshold schedule during tuning when set.
    pub constant_lambda: Option<f64>,
    pub mixup_alpha: f64,
    pub terms: LossTerms,
    /// Let consistency gradients flow into the CLM as well.
    pub bidirectional: bool,
    pub augment: bool,
    pub augment_cfg: AugmentConfig,
    pub reset_optimizer_at_tuning: bool,
    pub keep_epoch_checkpoints: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_epochs: 10,
            tuning_epochs: 100,
            batch_warmup: 32,
            batch_tuning: 64,
            lr_min: 1e-6,
            lr_max: 0.0014,
            adam: AdamConfig::default(),
            lookahead: LookaheadConfig::default(),
            lambda_max: 0.9,
            lambda_min: 0.6,
            warmup_lambda: 0.9,
            constant_lambda: None,
            mixup_alpha: 1.0,
            terms: LossTerms::default(),
            bidirectional: false,
            augment: true,
            augment_cfg: AugmentConfig::default(),
            reset_optimizer_at_tuning: true,
            keep_epoch_checkpoints: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min < self.lr_max) {
            return Err(Error::config(format!(
                "lr_min {} must be below lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if !(self.lookahead.alpha > 0.0 && self.lookahead.alpha <= 1.0) || self.lookahead.k == 0 {
            return Err(Error::config("lookahead needs alpha in (0, 1] and k >= 1"));
        }
        if self.mixup_alpha <= 0.0 {
            return Err(Error::config("mixup alpha must be positive"));
        }
        self.curriculum(1).validate()
    }

    pub fn curriculum(&self, total_iters: usize) -> CurriculumConfig {
        CurriculumConfig {
            lambda_max: self.lambda_max,
            lambda_min: self.lambda_min,
            total_iters,
        }
    }
}

/// A labeled training clip with standardized features.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub name: String,
    pub features: Array2<f64>,
    pub frame_target: Array2<f64>,
    pub clip_target: Array1<f64>,
}

impl LabeledClip {
    /// Clip target taken as the per-class maximum of the frame target.
    pub fn from_frames(
        name: impl Into<String>,
        features: Array2<f64>,
        frames: Array2<f64>,
    ) -> Self {
        let clip_target = frames.fold_axis(Axis(0), 0.0, |&a: &f64, &b| a.max(b));
        LabeledClip {
            name: name.into(),
            features,
            frame_target: frames,
            clip_target,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationClip {
    pub name: String,
    pub features: Array2<f64>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone)]
pub struct TrainSet {
    pub classes: ClassMap,
    pub synthetic: Vec<LabeledClip>,
    pub pseudo: Vec<LabeledClip>,
    pub unlabeled: Vec<Array2<f64>>,
    pub validation: Vec<ValidationClip>,
}

impl TrainSet {
    pub fn pools(&self) -> PoolSizes {
        PoolSizes {
            synthetic: self.synthetic.len(),
            pseudo: self.pseudo.len(),
            unlabeled: self.unlabeled.len(),
        }
    }

    fn labeled(&self, r: LabeledRef) -> &LabeledClip {
        match r {
            LabeledRef::Synthetic(i) => &self.synthetic[i],
            LabeledRef::Pseudo(i) => &self.pseudo[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub flm: CmnParameters,
    pub clm: CmnParameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub flm: OptimizerState,
    pub clm: OptimizerState,
}

impl Optimizers {
    pub fn new(m: &Models) -> Self {
        Optimizers {
            flm: OptimizerState::new(&m.flm),
            clm: OptimizerState::new(&m.clm),
        }
    }
}

/// Schedule values for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub phase: Phase,
    /// Global iteration, also used to derive the step's random streams.
    pub iteration: usize,
    pub lr: f64,
    pub lambda: f64,
    pub w: f64,
}

/// Learning rate, threshold and ramp weight at step `it` of a phase with
/// `n` steps. The last step of each phase lands on the schedule endpoint.
pub fn schedule_at(
    cfg: &TrainConfig,
    phase: Phase,
    it: usize,
    n: usize,
    global: usize,
) -> StepSchedule {
    let t_i = n.saturating_sub(1).max(1) as f64;
    let t = it as f64;
    match phase {
        Phase::Warmup => StepSchedule {
            phase,
            iteration: global,
            lr: lr_warmup(t, t_i, cfg.lr_min, cfg.lr_max),
            lambda: cfg.warmup_lambda,
            w: 0.0,
        },
        Phase::Tuning => StepSchedule {
            phase,
            iteration: global,
            lr: lr_decay(t, t_i, cfg.lr_min, cfg.lr_max),
            lambda: cfg
                .constant_lambda
                .unwrap_or_else(|| lambda_curr(t, &cfg.curriculum(t_i as usize))),
            w: ramp_weight(t, t_i),
        },
    }
}

struct LabeledJob {
    flm: CmnParameters,
    clm: CmnParameters,
    sample: LabeledSample,
}

/// One optimization step of both models on `batch`.
///
/// CLM outputs are evaluated first to settle the consistency gates; each
/// clip is then run again with traces and back-propagated on its own.
/// Per-clip gradients are summed in batch order.
pub fn train_step(
    cfg: &TrainConfig,
    data: &TrainSet,
    batch: &Batch,
    models: &mut Models,
    opt: &mut Optimizers,
    sched: &StepSchedule,
    exec: Execution,
) -> Result<LossBreakdown> {
    if sched.phase == Phase::Warmup && !batch.unlabeled.is_empty() {
        return Err(Error::config(
            "warm-up batches may not contain unlabeled clips",
        ));
    }
    let it = sched.iteration as u64;
    let rng_for = |stream: u64, i: usize| {
        ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0x57e9, it, stream, i as u64]))
    };
    let aug = |x: &Array2<f64>, kinds: &[AugmentKind], rng: &mut ChaCha8Rng| {
        if cfg.augment {
            augment(x, kinds, &cfg.augment_cfg, rng)
        } else {
            x.clone()
        }
    };
    let inputs: Vec<Array2<f64>> = parallel::map_range(exec, batch.labeled.len(), |i| {
        let clip = data.labeled(batch.labeled[i]);
        aug(
            &clip.features,
            augment::LABELED_AUGMENTS,
            &mut rng_for(1, i),
        )
    });
    let unl_inputs: Vec<Array2<f64>> = parallel::map_range(exec, batch.unlabeled.len(), |k| {
        aug(
            &data.unlabeled[batch.unlabeled[k]],
            augment::UNLABELED_AUGMENTS,
            &mut rng_for(2, k),
        )
    });

    let Models { flm, clm } = &*models;
    let clm_lab = parallel::try_map(exec, &inputs, |x| clm_forward(x, clm))?;
    let clm_unl = parallel::try_map(exec, &unl_inputs, |x| clm_forward(x, clm))?;

    // mixup partners and coefficients
    let mut pair_rng = rng_for(3, 0);
    let mut partner: Vec<usize> = (0..unl_inputs.len()).collect();
    partner.shuffle(&mut pair_rng);
    let lams = partner
        .iter()
        .map(|_| sample_mix_coefficient(cfg.mixup_alpha, &mut pair_rng))
        .collect::<Result<Vec<f64>>>()?;
    let clm_mixed = (0..partner.len())
        .map(|j| mixup(&clm_unl[j], &clm_unl[partner[j]], lams[j]))
        .collect::<Result<Vec<_>>>()?;

    let lambda = sched.lambda;
    let con_gate: Vec<bool> = clm_lab
        .iter()
        .map(|c| cfg.terms.con && gate_open(c, lambda))
        .collect();
    let inter_gate: Vec<bool> = clm_mixed
        .iter()
        .map(|c| sched.phase == Phase::Tuning && cfg.terms.inter && gate_open(c, lambda))
        .collect();
    let n_con = con_gate.iter().filter(|&&g| g).count();
    let n_inter = inter_gate.iter().filter(|&&g| g).count();
    let n_lab = inputs.len();

    let lab_jobs = parallel::try_map_range(exec, n_lab, |i| -> Result<LabeledJob> {
        let clip = data.labeled(batch.labeled[i]);
        let (fp, ft) = forward(&inputs[i], flm, true)?;
        let (cp, ct) = forward(&inputs[i], clm, true)?;
        let sample = LabeledSample {
            flm_frames: fp,
            clm_clip: cp.row(0).to_owned(),
            frame_target: clip.frame_target.clone(),
            clip_target: clip.clip_target.clone(),
        };
        let cw = con_gate[i].then(|| 1.0 / n_con as f64);
        let (dframes, dclip) = labeled_output_grads(&sample, n_lab, cw, cfg.bidirectional)?;
        let gf = backward(&dframes, ft.as_ref(), flm)?;
        let gc = backward(&dclip.insert_axis(Axis(0)), ct.as_ref(), clm)?;
        Ok(LabeledJob {
            flm: gf,
            clm: gc,
            sample,
        })
    })?;

    let mixed_inputs = (0..partner.len())
        .map(|j| mixup(&unl_inputs[j], &unl_inputs[partner[j]], lams[j]))
        .collect::<Result<Vec<_>>>()?;
    let unl_jobs = parallel::try_map_range(exec, partner.len(), |j| {
        if !inter_gate[j] {
            // closed gate: no gradient and no loss contribution
            let sample = UnlabeledSample {
                flm_mixed_frames: Array2::zeros((flm.config.out_frames(), flm.config.n_classes)),
                clm_mixed: clm_mixed[j].clone(),
            };
            return Ok((None, sample, None));
        }
        let (fp, ft) = forward(&mixed_inputs[j], flm, true)?;
        let sample = UnlabeledSample {
            flm_mixed_frames: fp,
            clm_mixed: clm_mixed[j].clone(),
        };
        let (dframes, dclm) = unlabeled_output_grads(&sample, sched.w / n_inter as f64);
        let g = backward(&dframes, ft.as_ref(), flm)?;
        Ok::<_, Error>((Some(g), sample, Some(dclm)))
    })?;

    let mut gflm = flm.zeros_like();
    let mut gclm = clm.zeros_like();
    for job in &lab_jobs {
        gflm.add_assign(&job.flm);
        gclm.add_assign(&job.clm);
    }
    for (g, _, _) in &unl_jobs {
        if let Some(g) = g {
            gflm.add_assign(g);
        }
    }
    if cfg.bidirectional && n_inter > 0 {
        // distribute each mixed-target gradient back to its two sources
        let mut dsrc: Vec<Array1<f64>> =
            vec![Array1::zeros(clm.config.n_classes); unl_inputs.len()];
        for (j, (_, _, d)) in unl_jobs.iter().enumerate() {
            if let Some(d) = d {
                dsrc[j] = &dsrc[j] + &(d * lams[j]);
                dsrc[partner[j]] = &dsrc[partner[j]] + &(d * (1.0 - lams[j]));
            }
        }
        let grads = parallel::try_map_range(exec, unl_inputs.len(), |k| {
            if dsrc[k].iter().all(|&v| v == 0.0) {
                return Ok(None);
            }
            let (_, t) = forward(&unl_inputs[k], clm, true)?;
            backward(&dsrc[k].clone().insert_axis(Axis(0)), t.as_ref(), clm).map(Some)
        })?;
        for g in grads.into_iter().flatten() {
            gclm.add_assign(&g);
        }
    }

    let labeled: Vec<LabeledSample> = lab_jobs.into_iter().map(|j| j.sample).collect();
    let unlabeled: Vec<UnlabeledSample> = unl_jobs.into_iter().map(|(_, s, _)| s).collect();
    let unlabeled = if sched.phase == Phase::Warmup {
        Vec::new()
    } else {
        unlabeled
    };
    let losses = total_loss(
        &labeled,
        &unlabeled,
        sched.phase,
        lambda,
        sched.w,
        cfg.terms,
    )?;
    if !losses.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at iteration {}",
            sched.iteration
        )));
    }
    opt.flm
        .step(&mut models.flm, &gflm, sched.lr, &cfg.adam, &cfg.lookahead)?;
    opt.clm
        .step(&mut models.clm, &gclm, sched.lr, &cfg.adam, &cfg.lookahead)?;
    Ok(losses)
}

/// Event-based macro F1 of the current models on the validation clips.
pub fn validation_f1(
    data: &TrainSet,
    models: &Models,
    decode: &DecodeConfig,
    metric: &MetricConfig,
    exec: Execution,
) -> Result<f64> {
    let est = parallel::try_map(exec, &data.validation, |v| {
        detect_events(&v.features, &models.flm, &models.clm, &data.classes, decode)
    })?;
    let mut r = BTreeMap::new();
    let mut e = BTreeMap::new();
    for (v, events) in data.validation.iter().zip(est) {
        r.insert(v.name.clone(), v.events.clone());
        e.insert(v.name.clone(), events);
    }
    Ok(event_based_scores(&r, &e, metric)?.macro_f1())
}

/// Everything needed to resume at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCheckpoint {
    pub models: Models,
    pub optimizers: Optimizers,
    /// Epochs completed over both phases.
    pub epochs_done: usize,
    pub iterations_done: usize,
    pub best_f1: Option<f64>,
    pub meta: BTreeMap<String, String>,
}

impl TrainCheckpoint {
    pub fn to_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        for (k, v) in &self.meta {
            f.set_meta(k.clone(), v);
        }
        f.set_meta("kind", "checkpoint");
        f.set_meta("epochs_done", self.epochs_done);
        f.set_meta("iterations_done", self.iterations_done);
        if let Some(b) = self.best_f1 {
            f.set_meta("best_f1", b);
        }
        write_model(&mut f, "flm", &self.models.flm);
        write_model(&mut f, "clm", &self.models.clm);
        for (tag, o) in [("flm", &self.optimizers.flm), ("clm", &self.optimizers.clm)] {
            f.set_meta(format!("opt.{tag}.step"), o.adam.step);
            write_model(&mut f, &format!("opt.{tag}.m"), &o.adam.m);
            write_model(&mut f, &format!("opt.{tag}.v"), &o.adam.v);
            write_model(&mut f, &format!("opt.{tag}.slow"), &o.slow);
        }
        f
    }

    pub fn from_file(f: &TensorFile) -> Result<Self> {
        if f.meta("kind")? != "checkpoint" {
            return Err(Error::Format("not a training checkpoint".into()));
        }
        let models = Models {
            flm: read_model(f, "flm")?,
            clm: read_model(f, "clm")?,
        };
        let opt = |tag: &str| -> Result<OptimizerState> {
            Ok(OptimizerState {
                adam: AdamState {
                    m: read_model(f, &format!("opt.{tag}.m"))?,
                    v: read_model(f, &format!("opt.{tag}.v"))?,
                    step: f.meta_parse(&format!("opt.{tag}.step"))?,
                },
                slow: read_model(f, &format!("opt.{tag}.slow"))?,
            })
        };
        let optimizers = Optimizers {
            flm: opt("flm")?,
            clm: opt("clm")?,
        };
        let meta = f
            .meta
            .iter()
            .filter(|(k, _)| !is_reserved_key(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(TrainCheckpoint {
            models,
            optimizers,
            epochs_done: f.meta_parse("epochs_done")?,
            iterations_done: f.meta_parse("iterations_done")?,
            best_f1: f.meta_parse("best_f1").ok(),
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_atomic(&self.to_file(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&TensorFile::load(path)?)
    }
}

fn is_reserved_key(k: &str) -> bool {
    k == "kind"
        || k == "epochs_done"
        || k == "iterations_done"
        || k == "best_f1"
        || k.starts_with("flm.")
        || k.starts_with("clm.")
        || k.starts_with("opt.")
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save_atomic(f: &TensorFile, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    f.save(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Where `last.sedt`, `best.sedt` and `train_log.csv` go.
    pub out_dir: Option<PathBuf>,
    pub exec: Execution,
    pub decode: DecodeConfig,
    pub metric: MetricConfig,
    /// Extra metadata stored in every checkpoint.
    pub meta: BTreeMap<String, String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            out_dir: None,
            exec: Execution::default(),
            decode: DecodeConfig::default(),
            metric: MetricConfig::default(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: Models,
    pub best: Option<Models>,
    pub log: Vec<LogRow>,
    /// `(epoch, macro F1)` for every validated epoch.
    pub validation: Vec<(usize, f64)>,
    pub best_f1: Option<f64>,
}

/// Runs the warm-up and tuning phases, starting from `start` (fresh models
/// or a checkpoint).
pub fn run_training(
    cfg: &TrainConfig,
    data: &TrainSet,
    start: TrainCheckpoint,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pools = data.pools();
    let ipe_w = iterations_per_epoch(&pools, cfg.batch_warmup);
    let ipe_t = iterations_per_epoch(&pools, cfg.batch_tuning);
    let n_warm = cfg.warmup_epochs * ipe_w;
    let n_tune = cfg.tuning_epochs * ipe_t;
    let total_epochs = cfg.warmup_epochs + cfg.tuning_epochs;

    let TrainCheckpoint {
        mut models,
        mut optimizers,
        epochs_done,
        mut iterations_done,
        mut best_f1,
        ..
    } = start;
    let mut meta = opts.meta.clone();
    meta.insert("classes".into(), data.classes.to_list());
    let log_path = opts.out_dir.as_ref().map(|d| d.join("train_log.csv"));
    let mut log_lines: Vec<String> = match (&log_path, epochs_done) {
        (Some(p), e) if e > 0 && p.exists() => fs::read_to_string(p)?
            .lines()
            .skip(1)
            .filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|v| v.parse::<usize>().ok())
                    .is_some_and(|i| i < iterations_done)
            })
            .map(str::to_string)
            .collect(),
        _ => Vec::new(),
    };
    if let Some(d) = &opts.out_dir {
        fs::create_dir_all(d)?;
    }
    let mut outcome = TrainOutcome {
        models: models.clone(),
        best: None,
        log: Vec::new(),
        validation: Vec::new(),
        best_f1,
    };

    for epoch in epochs_done..total_epochs {
        let (phase, local_epoch, ipe, n_phase, phase_start) = if epoch < cfg.warmup_epochs {
            (Phase::Warmup, epoch, ipe_w, n_warm, 0)
        } else {
            (
                Phase::Tuning,
                epoch - cfg.warmup_epochs,
                ipe_t,
                n_tune,
                n_warm,
            )
        };
        if phase == Phase::Tuning && local_epoch == 0 && cfg.reset_optimizer_at_tuning {
            optimizers = Optimizers::new(&models);
        }
        let batch_size = match phase {
            Phase::Warmup => cfg.batch_warmup,
            Phase::Tuning => cfg.batch_tuning,
        };
        let batches = compose_epoch(&pools, phase, batch_size, cfg.seed, epoch)?;
        for (b, batch) in batches.iter().enumerate() {
            let it = local_epoch * ipe + b;
            let sched = schedule_at(cfg, phase, it, n_phase, phase_start + it);
            let losses = train_step(
                cfg,
                data,
                batch,
                &mut models,
                &mut optimizers,
                &sched,
                opts.exec,
            )?;
            let row = LogRow {
                iteration: sched.iteration,
                phase,
                lr: sched.lr,
                lambda: sched.lambda,
                w: sched.w,
                losses,
            };
            log_lines.push(row.to_csv());
            outcome.log.push(row);
            iterations_done = sched.iteration + 1;
        }
        log::info!(
            "epoch {}/{} ({}) loss {:.4}",
            epoch + 1,
            total_epochs,
            phase.name(),
            outcome.log.last().map_or(f64::NAN, |r| r.losses.total)
        );
        let mut improved = false;
        if !data.validation.is_empty() {
            let f1 = validation_f1(data, &models, &opts.decode, &opts.metric, opts.exec)?;
            outcome.validation.push((epoch, f1));
            log::info!("epoch {} validation macro F1 {:.4}", epoch + 1, f1);
            if best_f1.is_none_or(|b| f1 > b) {
                best_f1 = Some(f1);
                outcome.best = Some(models.clone());
                improved = true;
            }
        }
        if let Some(dir) = &opts.out_dir {
            let ck = TrainCheckpoint {
                models: models.clone(),
                optimizers: optimizers.clone(),
                epochs_done: epoch + 1,
                iterations_done,
                best_f1,
                meta: meta.clone(),
            };
            ck.save(&dir.join("last.sedt"))?;
            if improved {
                ck.save(&dir.join("best.sedt"))?;
            }
            if cfg.keep_epoch_checkpoints {
                ck.save(&dir.join(format!("epoch_{:03}.sedt", epoch + 1)))?;
            }
            let mut text = format!("{LOG_HEADER}\n");
            for l in &log_lines {
                text.push_str(l);
                text.push('\n');
            }
            fs::write(dir.join("train_log.csv"), text)?;
        }
    }
    outcome.models = models;
    outcome.best_f1 = best_f1;
    Ok(outcome)
}
