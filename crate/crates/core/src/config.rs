//! Flat `section.key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so a
//! file only needs the keys it changes. Unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::cnmf::{CnmfConfig, HUpdateRule};
use crate::data::ToySpec;
use crate::error::{Error, Result};
use crate::eval::{CleanupOrder, DecodeConfig, Matching, MetricConfig, OffsetRule};
use crate::frontend::FrontendConfig;
use crate::model::{parse_pools, ModelConfig, Variant};
use crate::train::TrainConfig;

/// Architecture knobs of one network; input size and class count come from
/// the frontend and the class list.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub filters: Vec<usize>,
    pub pools: Vec<(usize, usize)>,
    pub layers: usize,
    pub heads: usize,
    pub positional_encoding: bool,
    pub half_step: f64,
}

impl ArchConfig {
    fn from_model(m: &ModelConfig) -> Self {
        ArchConfig {
            filters: m.filters.clone(),
            pools: m.pools.clone(),
            layers: m.layers,
            heads: m.heads,
            positional_encoding: m.positional_encoding,
            half_step: m.half_step,
        }
    }

    pub fn model(
        &self,
        variant: Variant,
        n_frames: usize,
        n_mels: usize,
        n_classes: usize,
    ) -> ModelConfig {
        ModelConfig {
            variant,
            n_frames,
            n_mels,
            filters: self.filters.clone(),
            pools: self.pools.clone(),
            layers: self.layers,
            heads: self.heads,
            n_classes,
            positional_encoding: self.positional_encoding,
            half_step: self.half_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub frontend: FrontendConfig,
    pub cnmf: CnmfConfig,
    pub flm: ArchConfig,
    pub clm: ArchConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub metric: MetricConfig,
    pub toy: ToySpec,
    /// Standardize log-mel features with training-set statistics.
    pub standardize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frontend: FrontendConfig::default(),
            cnmf: CnmfConfig::default(),
            flm: ArchConfig::from_model(&ModelConfig::flm_default()),
            clm: ArchConfig::from_model(&ModelConfig::clm_default()),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            metric: MetricConfig::default(),
            toy: ToySpec::default(),
            standardize: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{key}`: cannot parse `{v}`"))
}

fn parse_bool(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{key}`: expected true or false, got `{v}`")),
    }
}

fn parse_usizes(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn pools_text(p: &[(usize, usize)]) -> String {
    p.iter()
        .map(|(a, b)| format!("{a}x{b}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn list_text<T: Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Model configs for the frontend geometry and `n_classes` classes.
    pub fn models(&self, n_classes: usize) -> (ModelConfig, ModelConfig) {
        let frames = self.frontend.n_frames(crate::frontend::CLIP_SAMPLES);
        let mels = self.frontend.mel_bins;
        (
            self.flm.model(Variant::Flm, frames, mels, n_classes),
            self.clm.model(Variant::Clm, frames, mels, n_classes),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.cnmf.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        self.toy.validate()?;
        let (f, c) = self.models(self.toy.n_classes.max(1));
        f.validate()?;
        c.validate()
    }

    fn arch_mut(&mut self, section: &str) -> Option<&mut ArchConfig> {
        match section {
            "flm" => Some(&mut self.flm),
            "clm" => Some(&mut self.clm),
            _ => None,
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let k = key;
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| format!("key `{key}` has no section prefix"))?;
        if let Some(a) = self.arch_mut(section) {
            match name {
                "filters" => a.filters = parse_usizes(k, v)?,
                "pools" => a.pools = parse_pools(v).map_err(|e| e.to_string())?,
                "layers" => a.layers = parse(k, v)?,
                "heads" => a.heads = parse(k, v)?,
                "positional_encoding" => a.positional_encoding = parse_bool(k, v)?,
                "half_step" => a.half_step = parse(k, v)?,
                _ => return Err(format!("unknown key `{key}`")),
            }
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "frontend.window_size" => self.frontend.window_size = parse(k, v)?,
            "frontend.hop_length" => self.frontend.hop_length = parse(k, v)?,
            "frontend.mel_bins" => self.frontend.mel_bins = parse(k, v)?,
            "frontend.log_floor" => self.frontend.log_floor = parse(k, v)?,
            "features.standardize" => self.standardize = parse_bool(k, v)?,

            "cnmf.components" => self.cnmf.components = parse(k, v)?,
            "cnmf.shifts" => self.cnmf.shifts = parse(k, v)?,
            "cnmf.iterations" => self.cnmf.iterations = parse(k, v)?,
            "cnmf.threshold" => self.cnmf.threshold = parse(k, v)?,
            "cnmf.seed" => self.cnmf.seed = parse(k, v)?,
            "cnmf.h_update" => {
                self.cnmf.h_update = match v {
                    "joint" => HUpdateRule::Joint,
                    "sequential" => HUpdateRule::Sequential { recompute: false },
                    "sequential_recompute" => HUpdateRule::Sequential { recompute: true },
                    _ => return Err(format!("`{key}`: unknown rule `{v}`")),
                }
            }

            "train.warmup_epochs" => t.warmup_epochs = parse(k, v)?,
            "train.tuning_epochs" => t.tuning_epochs = parse(k, v)?,
            "train.batch_warmup" => t.batch_warmup = parse(k, v)?,
            "train.batch_tuning" => t.batch_tuning = parse(k, v)?,
            "train.lr_min" => t.lr_min = parse(k, v)?,
            "train.lr_max" => t.lr_max = parse(k, v)?,
            "train.adam_beta1" => t.adam.beta1 = parse(k, v)?,
            "train.adam_beta2" => t.adam.beta2 = parse(k, v)?,
            "train.adam_eps" => t.adam.eps = parse(k, v)?,
            "train.lookahead_alpha" => t.lookahead.alpha = parse(k, v)?,
            "train.lookahead_k" => t.lookahead.k = parse(k, v)?,
            "train.lambda_max" => t.lambda_max = parse(k, v)?,
            "train.lambda_min" => t.lambda_min = parse(k, v)?,
            "train.warmup_lambda" => t.warmup_lambda = parse(k, v)?,
            "train.constant_lambda" => {
                t.constant_lambda = if v == "none" {
                    None
                } else {
                    Some(parse(k, v)?)
                }
            }
            "train.mixup_alpha" => t.mixup_alpha = parse(k, v)?,
            "train.l_con" => t.terms.con = parse_bool(k, v)?,
            "train.l_inter" => t.terms.inter = parse_bool(k, v)?,
            "train.bidirectional" => t.bidirectional = parse_bool(k, v)?,
            "train.augment" => t.augment = parse_bool(k, v)?,
            "train.noise_scale" => t.augment_cfg.noise_scale = parse(k, v)?,
            "train.max_time_mask" => t.augment_cfg.max_time_mask = parse(k, v)?,
            "train.max_freq_mask" => t.augment_cfg.max_freq_mask = parse(k, v)?,
            "train.reset_optimizer_at_tuning" => t.reset_optimizer_at_tuning = parse_bool(k, v)?,
            "train.keep_epoch_checkpoints" => t.keep_epoch_checkpoints = parse_bool(k, v)?,
            "train.seed" => t.seed = parse(k, v)?,

            "decode.clip_threshold" => self.decode.clip_threshold = parse(k, v)?,
            "decode.frame_threshold" => self.decode.frame_threshold = parse(k, v)?,
            "decode.median_window" => self.decode.median_window = parse(k, v)?,
            "decode.min_duration" => self.decode.min_duration = parse(k, v)?,
            "decode.merge_gap" => self.decode.merge_gap = parse(k, v)?,
            "decode.order" => {
                self.decode.order = match v {
                    "merge_then_drop" => CleanupOrder::MergeThenDrop,
                    "drop_then_merge" => CleanupOrder::DropThenMerge,
                    _ => return Err(format!("`{key}`: unknown order `{v}`")),
                }
            }

            "metric.onset_collar" => self.metric.onset_collar = parse(k, v)?,
            "metric.offset_rule" => {
                let (collar, fraction) = match self.metric.offset_rule {
                    OffsetRule::LengthRelative { collar, fraction } => (collar, fraction),
                    OffsetRule::Fixed(c) => (c, 0.2),
                };
                self.metric.offset_rule = match v {
                    "relative" => OffsetRule::LengthRelative { collar, fraction },
                    "fixed" => OffsetRule::Fixed(collar),
                    _ => return Err(format!("`{key}`: unknown rule `{v}`")),
                }
            }
            "metric.offset_collar" => {
                let c: f64 = parse(k, v)?;
                self.metric.offset_rule = match self.metric.offset_rule {
                    OffsetRule::LengthRelative { fraction, .. } => OffsetRule::LengthRelative {
                        collar: c,
                        fraction,
                    },
                    OffsetRule::Fixed(_) => OffsetRule::Fixed(c),
                }
            }
            "metric.offset_fraction" => {
                let f: f64 = parse(k, v)?;
                if let OffsetRule::LengthRelative { collar, .. } = self.metric.offset_rule {
                    self.metric.offset_rule = OffsetRule::LengthRelative {
                        collar,
                        fraction: f,
                    };
                }
            }
            "metric.matching" => {
                self.metric.matching = match v {
                    "greedy" => Matching::Greedy,
                    "optimal" => Matching::Optimal,
                    _ => return Err(format!("`{key}`: unknown matching `{v}`")),
                }
            }

            "toy.classes" => self.toy.n_classes = parse(k, v)?,
            "toy.strong" => self.toy.n_strong = parse(k, v)?,
            "toy.weak" => self.toy.n_weak = parse(k, v)?,
            "toy.unlabeled" => self.toy.n_unlabeled = parse(k, v)?,
            "toy.validation" => self.toy.n_validation = parse(k, v)?,
            "toy.test" => self.toy.n_test = parse(k, v)?,
            "toy.min_events" => self.toy.min_events = parse(k, v)?,
            "toy.max_events" => self.toy.max_events = parse(k, v)?,
            "toy.min_duration" => self.toy.min_duration = parse(k, v)?,
            "toy.max_duration" => self.toy.max_duration = parse(k, v)?,
            "toy.noise_floor" => self.toy.noise_floor = parse(k, v)?,
            "toy.seed" => self.toy.seed = parse(k, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, grouped by section.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        let f = &self.frontend;
        put("frontend.window_size", f.window_size.to_string());
        put("frontend.hop_length", f.hop_length.to_string());
        put("frontend.mel_bins", f.mel_bins.to_string());
        put("frontend.log_floor", format!("{:e}", f.log_floor));
        put("features.standardize", self.standardize.to_string());
        let c = &self.cnmf;
        put("cnmf.components", c.components.to_string());
        put("cnmf.shifts", c.shifts.to_string());
        put("cnmf.iterations", c.iterations.to_string());
        put("cnmf.threshold", c.threshold.to_string());
        put(
            "cnmf.h_update",
            match c.h_update {
                HUpdateRule::Joint => "joint",
                HUpdateRule::Sequential { recompute: false } => "sequential",
                HUpdateRule::Sequential { recompute: true } => "sequential_recompute",
            }
            .into(),
        );
        put("cnmf.seed", c.seed.to_string());
        for (s, a) in [("flm", &self.flm), ("clm", &self.clm)] {
            put(&format!("{s}.filters"), list_text(&a.filters));
            put(&format!("{s}.pools"), pools_text(&a.pools));
            put(&format!("{s}.layers"), a.layers.to_string());
            put(&format!("{s}.heads"), a.heads.to_string());
            put(
                &format!("{s}.positional_encoding"),
                a.positional_encoding.to_string(),
            );
            put(&format!("{s}.half_step"), a.half_step.to_string());
        }
        let t = &self.train;
        put("train.warmup_epochs", t.warmup_epochs.to_string());
        put("train.tuning_epochs", t.tuning_epochs.to_string());
        put("train.batch_warmup", t.batch_warmup.to_string());
        put("train.batch_tuning", t.batch_tuning.to_string());
        put("train.lr_min", format!("{:e}", t.lr_min));
        put("train.lr_max", t.lr_max.to_string());
        put("train.adam_beta1", t.adam.beta1.to_string());
        put("train.adam_beta2", t.adam.beta2.to_string());
        put("train.adam_eps", format!("{:e}", t.adam.eps));
        put("train.lookahead_alpha", t.lookahead.alpha.to_string());
        put("train.lookahead_k", t.lookahead.k.to_string());
        put("train.lambda_max", t.lambda_max.to_string());
        put("train.lambda_min", t.lambda_min.to_string());
        put("train.warmup_lambda", t.warmup_lambda.to_string());
        put(
            "train.constant_lambda",
            t.constant_lambda.map_or("none".into(), |l| l.to_string()),
        );
        put("train.mixup_alpha", t.mixup_alpha.to_string());
        put("train.l_con", t.terms.con.to_string());
        put("train.l_inter", t.terms.inter.to_string());
        put("train.bidirectional", t.bidirectional.to_string());
        put("train.augment", t.augment.to_string());
        put("train.noise_scale", t.augment_cfg.noise_scale.to_string());
        put(
            "train.max_time_mask",
            t.augment_cfg.max_time_mask.to_string(),
        );
        put(
            "train.max_freq_mask",
            t.augment_cfg.max_freq_mask.to_string(),
        );
        put(
            "train.reset_optimizer_at_tuning",
            t.reset_optimizer_at_tuning.to_string(),
        );
        put(
            "train.keep_epoch_checkpoints",
            t.keep_epoch_checkpoints.to_string(),
        );
        put("train.seed", t.seed.to_string());
        let d = &self.decode;
        put("decode.clip_threshold", d.clip_threshold.to_string());
        put("decode.frame_threshold", d.frame_threshold.to_string());
        put("decode.median_window", d.median_window.to_string());
        put("decode.min_duration", d.min_duration.to_string());
        put("decode.merge_gap", d.merge_gap.to_string());
        put(
            "decode.order",
            match d.order {
                CleanupOrder::MergeThenDrop => "merge_then_drop",
                CleanupOrder::DropThenMerge => "drop_then_merge",
            }
            .into(),
        );
        let m = &self.metric;
        put("metric.onset_collar", m.onset_collar.to_string());
        match m.offset_rule {
            OffsetRule::LengthRelative { collar, fraction } => {
                put("metric.offset_rule", "relative".into());
                put("metric.offset_collar", collar.to_string());
                put("metric.offset_fraction", fraction.to_string());
            }
            OffsetRule::Fixed(c) => {
                put("metric.offset_rule", "fixed".into());
                put("metric.offset_collar", c.to_string());
            }
        }
        put(
            "metric.matching",
            match m.matching {
                Matching::Greedy => "greedy",
                Matching::Optimal => "optimal",
            }
            .into(),
        );
        let y = &self.toy;
        put("toy.classes", y.n_classes.to_string());
        put("toy.strong", y.n_strong.to_string());
        put("toy.weak", y.n_weak.to_string());
        put("toy.unlabeled", y.n_unlabeled.to_string());
        put("toy.validation", y.n_validation.to_string());
        put("toy.test", y.n_test.to_string());
        put("toy.min_events", y.min_events.to_string());
        put("toy.max_events", y.max_events.to_string());
        put("toy.min_duration", y.min_duration.to_string());
        put("toy.max_duration", y.max_duration.to_string());
        put("toy.noise_floor", y.noise_floor.to_string());
        put("toy.seed", y.seed.to_string());
        out
    }

    /// Renders every key, one section per paragraph.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut last = "";
        let entries = self.entries();
        for (k, v) in &entries {
            let section = k.split('.').next().unwrap_or("");
            if section != last {
                if !s.is_empty() {
                    s.push('\n');
                }
                last = section;
            }
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Applies `text` on top of the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(text, path)?;
        Ok(cfg)
    }

    /// Applies `text` on top of the current values.
    pub fn apply(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("`{k}` set twice")));
            }
            self.set(k, v).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}
