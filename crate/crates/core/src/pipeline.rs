//! File-based stages shared by the command line and the integration tests.
//!
//! A dataset directory follows the toy synthesizer layout:
//!
//! ```text
//! <root>/audio/<subset>/*.wav
//! <root>/metadata/{strong,weak,unlabeled,validation,test}.tsv
//! <root>/metadata/classes.txt
//! <root>/metadata/hidden/weak_strong.tsv   (optional ground truth)
//! ```
//!
//! Stages communicate only through files: dictionaries (`<dir>/<class>.sedt`),
//! pseudo labels (`<dir>/<clip>.sedt` plus `index.tsv`), checkpoints and
//! training logs, prediction TSVs and score CSVs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};

use crate::cnmf::{
    build_pseudo_label, extract_event_dictionary, load_dictionary, save_dictionary, CnmfConfig,
    EventDictionary, FrameMask, PseudoStrongLabel,
};
use crate::config::RunConfig;
use crate::data::{
    audio_path, event_frames, frame_labels, read_manifest, ClassMap, Event, Manifest, ManifestKind,
};
use crate::error::{Error, Result};
use crate::eval::{detect_events, event_based_scores, frame_f1, predictions_tsv, EventScores};
use crate::frontend::{compute_mel, load_clip, log_scale, FrontendConfig, MelSpectrogram};
use crate::model::init_params;
use crate::parallel::{self, Execution};
use crate::tensor_io::{Tensor, TensorFile};
use crate::train::{
    mix_seed, run_training, save_atomic, LabeledClip, Models, Optimizers, TrainCheckpoint,
    TrainOptions, TrainOutcome, TrainSet, ValidationClip,
};

/// Environment variable naming the feature cache directory.
pub const CACHE_ENV: &str = "SED_CACHE_DIR";

/// Paths inside a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataLayout { root: root.into() }
    }

    pub fn audio_dir(&self, subset: &str) -> PathBuf {
        self.root.join("audio").join(subset)
    }

    pub fn manifest(&self, subset: &str) -> PathBuf {
        self.root.join("metadata").join(format!("{subset}.tsv"))
    }

    pub fn hidden_weak_truth(&self) -> PathBuf {
        self.root
            .join("metadata")
            .join("hidden")
            .join("weak_strong.tsv")
    }

    /// `classes.txt` when present, else the DESED label set.
    pub fn classes(&self) -> Result<ClassMap> {
        let p = self.root.join("metadata").join("classes.txt");
        if p.exists() {
            ClassMap::parse(fs::read_to_string(p)?.trim())
        } else {
            Ok(ClassMap::desed())
        }
    }

    pub fn has(&self, subset: &str) -> bool {
        self.manifest(subset).exists()
    }
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Pre-log mel spectrograms, optionally cached on disk keyed by the audio
/// bytes and the frontend settings.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    pub frontend: FrontendConfig,
    pub cache: Option<PathBuf>,
}

impl FeatureStore {
    pub fn new(frontend: FrontendConfig, cache: Option<PathBuf>) -> Self {
        FeatureStore { frontend, cache }
    }

    /// Uses `$SED_CACHE_DIR` when set and non-empty.
    pub fn from_env(frontend: FrontendConfig) -> Self {
        let cache = std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        Self::new(frontend, cache)
    }

    fn key(&self, audio: &[u8]) -> String {
        let f = &self.frontend;
        let settings = format!("{}/{}/{}", f.window_size, f.hop_length, f.mel_bins);
        let h = fnv1a(settings.as_bytes(), fnv1a(audio, 0xcbf2_9ce4_8422_2325));
        format!("{h:016x}.sedt")
    }

    pub fn mel(&self, path: &Path) -> Result<MelSpectrogram> {
        let Some(dir) = &self.cache else {
            return compute_mel(&load_clip(path)?, &self.frontend);
        };
        let cached = dir.join(self.key(&fs::read(path)?));
        if let Ok(f) = TensorFile::load(&cached) {
            if let Ok(t) = f.get("mel") {
                return Ok(MelSpectrogram {
                    values: t.to_array2()?,
                    is_log: false,
                });
            }
        }
        let mel = compute_mel(&load_clip(path)?, &self.frontend)?;
        fs::create_dir_all(dir)?;
        let mut f = TensorFile::new();
        f.set_meta("kind", "mel_cache");
        f.push(Tensor::from_array2("mel", &mel.values));
        save_atomic(&f, &cached)?;
        Ok(mel)
    }

    pub fn mels(
        &self,
        dir: &Path,
        names: &[String],
        exec: Execution,
    ) -> Result<Vec<MelSpectrogram>> {
        parallel::try_map(exec, names, |n| self.mel(&audio_path(dir, n)))
    }
}

/// Per-mel-bin affine normalization of log-mel features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n_bins: usize) -> Self {
        Standardizer {
            mean: vec![0.0; n_bins],
            std: vec![1.0; n_bins],
        }
    }

    /// Population mean and standard deviation over every frame of `feats`.
    pub fn fit(feats: &[&Array2<f64>]) -> Result<Self> {
        let first = feats
            .first()
            .ok_or_else(|| Error::config("no features to standardize"))?;
        let n_bins = first.ncols();
        let mut sum = vec![0.0; n_bins];
        let mut count = 0usize;
        for f in feats {
            if f.ncols() != n_bins {
                return Err(Error::shape("feature matrices differ in bin count"));
            }
            for row in f.rows() {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
            count += f.nrows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; n_bins];
        for f in feats {
            for row in f.rows() {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        y
    }

    pub fn write_meta(&self, meta: &mut BTreeMap<String, String>) {
        let join = |xs: &[f64]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        meta.insert("features.mean".into(), join(&self.mean));
        meta.insert("features.std".into(), join(&self.std));
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Option<Self>> {
        let parse = |k: &str| -> Result<Option<Vec<f64>>> {
            meta.get(k)
                .map(|v| {
                    v.split(',')
                        .map(|x| {
                            x.parse()
                                .map_err(|_| Error::Format(format!("bad number in `{k}`")))
                        })
                        .collect()
                })
                .transpose()
        };
        match (parse("features.mean")?, parse("features.std")?) {
            (Some(mean), Some(std)) if mean.len() == std.len() => {
                Ok(Some(Standardizer { mean, std }))
            }
            (None, None) => Ok(None),
            _ => Err(Error::Format("inconsistent feature statistics".into())),
        }
    }
}

/// Log-mel features as the models see them.
pub fn model_features(
    mel: &MelSpectrogram,
    floor: f64,
    std: Option<&Standardizer>,
) -> Result<Array2<f64>> {
    let v = log_scale(mel, floor)?.values;
    Ok(match std {
        Some(s) => s.apply(&v),
        None => v,
    })
}

/// Frame mask of the union of `label`'s events.
pub fn class_mask(events: &[Event], label: &str, n_frames: usize) -> FrameMask {
    let mut keep = vec![false; n_frames];
    for e in events.iter().filter(|e| e.label == label) {
        let (a, b) = event_frames(e.onset, e.offset, n_frames);
        keep[a..b].iter_mut().for_each(|k| *k = true);
    }
    FrameMask::new(keep)
}

/// One dictionary per class that occurs in the strong clips.
pub fn extract_dictionaries(
    clips: &[(MelSpectrogram, Vec<Event>)],
    classes: &ClassMap,
    cfg: &CnmfConfig,
    exec: Execution,
) -> Result<BTreeMap<String, EventDictionary>> {
    let mut out = BTreeMap::new();
    for (c, label) in classes.labels().iter().enumerate() {
        let masked: Vec<(MelSpectrogram, FrameMask)> = clips
            .iter()
            .filter(|(_, evs)| evs.iter().any(|e| &e.label == label))
            .map(|(mel, evs)| (mel.clone(), class_mask(evs, label, mel.n_frames())))
            .collect();
        if masked.is_empty() {
            log::warn!("class `{label}` has no strong clips; no dictionary");
            continue;
        }
        let class_cfg = CnmfConfig {
            seed: mix_seed(cfg.seed, &[c as u64]),
            ..cfg.clone()
        };
        out.insert(
            label.clone(),
            extract_event_dictionary(label, &masked, &class_cfg, exec)?,
        );
    }
    Ok(out)
}

pub fn save_dictionaries(dicts: &BTreeMap<String, EventDictionary>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (label, d) in dicts {
        save_dictionary(d, dir.join(format!("{label}.sedt")))?;
    }
    Ok(())
}

/// Every `<class>.sedt` in `dir` for the given classes.
pub fn load_dictionaries(
    dir: &Path,
    classes: &ClassMap,
) -> Result<BTreeMap<String, EventDictionary>> {
    let mut out = BTreeMap::new();
    for label in classes.labels() {
        let p = dir.join(format!("{label}.sedt"));
        if p.exists() {
            out.insert(label.clone(), load_dictionary(p)?);
        }
    }
    if out.is_empty() {
        return Err(Error::config(format!(
            "no dictionaries in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Pseudo strong labels for weak clips given as `(name, mel, tags)`.
pub fn pseudo_labels(
    clips: &[(String, MelSpectrogram, BTreeSet<String>)],
    dicts: &BTreeMap<String, EventDictionary>,
    classes: &ClassMap,
    cfg: &CnmfConfig,
    exec: Execution,
) -> Result<BTreeMap<String, PseudoStrongLabel>> {
    let labels = parallel::try_map(exec, clips, |(_, mel, tags)| {
        build_pseudo_label(mel, tags, dicts, classes, cfg)
    })?;
    Ok(clips.iter().map(|c| c.0.clone()).zip(labels).collect())
}

fn stem(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(s, _)| s)
}

/// Writes `<dir>/<stem>.sedt` per clip and `<dir>/index.tsv`.
pub fn save_pseudo_labels(
    labels: &BTreeMap<String, PseudoStrongLabel>,
    classes: &ClassMap,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::from("filename\tlabel_file\n");
    for (name, l) in labels {
        let file = format!("{}.sedt", stem(name));
        let mut f = TensorFile::new();
        f.set_meta("kind", "pseudo_label");
        f.set_meta("filename", name);
        f.set_meta("classes", classes.to_list());
        f.push(Tensor::from_array2("labels", &l.to_f64()));
        f.save(dir.join(&file))?;
        index.push_str(&format!("{name}\t{file}\n"));
    }
    fs::write(dir.join("index.tsv"), index)?;
    Ok(())
}

pub fn load_pseudo_labels(dir: &Path) -> Result<BTreeMap<String, PseudoStrongLabel>> {
    let index_path = dir.join("index.tsv");
    let text = fs::read_to_string(&index_path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (name, file) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: index_path.clone(),
            line: i + 1,
            msg: "expected `filename<TAB>label_file`".into(),
        })?;
        let f = TensorFile::load(dir.join(file))?;
        let labels = f.get("labels")?.to_array2()?.mapv(|v| u8::from(v > 0.5));
        out.insert(name.to_string(), PseudoStrongLabel { labels });
    }
    Ok(out)
}

/// Micro frame F1 of pseudo labels against strong ground truth, pooled over clips.
pub fn pseudo_label_f1(
    labels: &BTreeMap<String, PseudoStrongLabel>,
    truth: &BTreeMap<String, Vec<Event>>,
    classes: &ClassMap,
) -> Result<f64> {
    let mut preds = Vec::new();
    let mut refs = Vec::new();
    for (name, l) in labels {
        let events = truth
            .get(name)
            .ok_or_else(|| Error::config(format!("no ground truth for `{name}`")))?;
        refs.push(frame_labels(events, classes, l.labels.nrows())?);
        preds.push(l.labels.view());
    }
    if preds.is_empty() {
        return Err(Error::config("no pseudo labels to score"));
    }
    let refs_v: Vec<_> = refs.iter().map(|r| r.view()).collect();
    let p = concatenate(Axis(0), &preds).map_err(|e| Error::shape(e.to_string()))?;
    let r = concatenate(Axis(0), &refs_v).map_err(|e| Error::shape(e.to_string()))?;
    frame_f1(&p, &r)
}

/// Strong-clip dictionaries, written to `out`.
pub fn stage_extract_dict(
    data: &DataLayout,
    cfg: &RunConfig,
    store: &FeatureStore,
    out: &Path,
    exec: Execution,
) -> Result<BTreeMap<String, EventDictionary>> {
    let classes = data.classes()?;
    let strong = read_manifest(data.manifest("strong"), ManifestKind::Strong)?.events_by_clip()?;
    let names: Vec<String> = strong.keys().cloned().collect();
    let mels = store.mels(&data.audio_dir("strong"), &names, exec)?;
    let clips: Vec<(MelSpectrogram, Vec<Event>)> =
        mels.into_iter().zip(strong.into_values()).collect();
    let dicts = extract_dictionaries(&clips, &classes, &cfg.cnmf, exec)?;
    save_dictionaries(&dicts, out)?;
    Ok(dicts)
}

#[derive(Debug, Clone)]
pub struct PseudoLabelReport {
    pub labels: BTreeMap<String, PseudoStrongLabel>,
    /// Frame F1 against the hidden ground truth, when it exists.
    pub frame_f1: Option<f64>,
}

/// Pseudo labels for the weak subset, written to `out`.
pub fn stage_pseudo_label(
    data: &DataLayout,
    cfg: &RunConfig,
    store: &FeatureStore,
    dict_dir: &Path,
    out: &Path,
    exec: Execution,
) -> Result<PseudoLabelReport> {
    let classes = data.classes()?;
    let dicts = load_dictionaries(dict_dir, &classes)?;
    let weak = read_manifest(data.manifest("weak"), ManifestKind::Weak)?.tags_by_clip();
    let names: Vec<String> = weak.keys().cloned().collect();
    let mels = store.mels(&data.audio_dir("weak"), &names, exec)?;
    let clips: Vec<(String, MelSpectrogram, BTreeSet<String>)> = names
        .into_iter()
        .zip(mels)
        .zip(weak.into_values())
        .map(|((n, m), t)| (n, m, t))
        .collect();
    let labels = pseudo_labels(&clips, &dicts, &classes, &cfg.cnmf, exec)?;
    save_pseudo_labels(&labels, &classes, out)?;
    let truth_path = data.hidden_weak_truth();
    let frame_f1 = if truth_path.exists() {
        let truth = read_manifest(&truth_path, ManifestKind::Strong)?.events_by_clip()?;
        let f1 = pseudo_label_f1(&labels, &truth, &classes)?;
        fs::write(
            out.join("quality.csv"),
            format!("metric,value\nframe_f1,{f1}\n"),
        )?;
        Some(f1)
    } else {
        None
    };
    Ok(PseudoLabelReport { labels, frame_f1 })
}

/// Loads every training subset, fits the feature statistics and returns
/// them with the assembled [`TrainSet`].
pub fn load_train_set(
    data: &DataLayout,
    cfg: &RunConfig,
    store: &FeatureStore,
    pseudo_dir: &Path,
    exec: Execution,
) -> Result<(TrainSet, Option<Standardizer>)> {
    let classes = data.classes()?;
    let floor = cfg.frontend.log_floor;
    let logs = |subset: &str, names: &[String]| -> Result<Vec<Array2<f64>>> {
        let mels = store.mels(&data.audio_dir(subset), names, exec)?;
        parallel::try_map(exec, &mels, |m| model_features(m, floor, None))
    };

    let strong = read_manifest(data.manifest("strong"), ManifestKind::Strong)?.events_by_clip()?;
    let strong_names: Vec<String> = strong.keys().cloned().collect();
    let strong_feats = logs("strong", &strong_names)?;

    let pseudo = load_pseudo_labels(pseudo_dir)?;
    let weak_names: Vec<String> = pseudo.keys().cloned().collect();
    let weak_feats = logs("weak", &weak_names)?;

    let unl_names = read_manifest(data.manifest("unlabeled"), ManifestKind::Unlabeled)?.filenames();
    let unl_feats = logs("unlabeled", &unl_names)?;

    let std = if cfg.standardize {
        let all: Vec<&Array2<f64>> = strong_feats
            .iter()
            .chain(&weak_feats)
            .chain(&unl_feats)
            .collect();
        Some(Standardizer::fit(&all)?)
    } else {
        None
    };
    let norm = |x: Array2<f64>| match &std {
        Some(s) => s.apply(&x),
        None => x,
    };

    let mut synthetic = Vec::with_capacity(strong.len());
    for ((name, events), x) in strong.iter().zip(strong_feats) {
        let y = frame_labels(events, &classes, x.nrows())?.mapv(f64::from);
        synthetic.push(LabeledClip::from_frames(name.clone(), norm(x), y));
    }
    let pseudo_clips = pseudo
        .iter()
        .zip(weak_feats)
        .map(|((name, l), x)| LabeledClip::from_frames(name.clone(), norm(x), l.to_f64()))
        .collect();
    let unlabeled = unl_feats.into_iter().map(norm).collect();

    let validation = if data.has("validation") {
        let val =
            read_manifest(data.manifest("validation"), ManifestKind::Strong)?.events_by_clip()?;
        let names: Vec<String> = val.keys().cloned().collect();
        logs("validation", &names)?
            .into_iter()
            .zip(val)
            .map(|(x, (name, events))| ValidationClip {
                name,
                features: norm(x),
                events,
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok((
        TrainSet {
            classes,
            synthetic,
            pseudo: pseudo_clips,
            unlabeled,
            validation,
        },
        std,
    ))
}

/// Freshly initialized models and optimizer state for `cfg`.
pub fn fresh_checkpoint(cfg: &RunConfig, n_classes: usize) -> Result<TrainCheckpoint> {
    let (flm_cfg, clm_cfg) = cfg.models(n_classes);
    let models = Models {
        flm: init_params(&flm_cfg, mix_seed(cfg.train.seed, &[1]))?,
        clm: init_params(&clm_cfg, mix_seed(cfg.train.seed, &[2]))?,
    };
    Ok(TrainCheckpoint {
        optimizers: Optimizers::new(&models),
        models,
        epochs_done: 0,
        iterations_done: 0,
        best_f1: None,
        meta: BTreeMap::new(),
    })
}

/// Trains from scratch or from `resume`, writing checkpoints and the
/// training log to `out`.
pub fn stage_train(
    data: &DataLayout,
    cfg: &RunConfig,
    store: &FeatureStore,
    pseudo_dir: &Path,
    out: &Path,
    resume: Option<&Path>,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (set, std) = load_train_set(data, cfg, store, pseudo_dir, exec)?;
    let start = match resume {
        Some(p) => TrainCheckpoint::load(p)?,
        None => fresh_checkpoint(cfg, set.classes.len())?,
    };
    let mut meta = BTreeMap::new();
    if let Some(s) = &std {
        s.write_meta(&mut meta);
    }
    meta.insert(
        "features.log_floor".into(),
        cfg.frontend.log_floor.to_string(),
    );
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        exec,
        decode: cfg.decode.clone(),
        metric: cfg.metric.clone(),
        meta,
    };
    run_training(&cfg.train, &set, start, &opts)
}

/// Models plus everything inference needs from a checkpoint.
#[derive(Debug, Clone)]
pub struct InferenceModel {
    pub models: Models,
    pub classes: ClassMap,
    pub standardizer: Option<Standardizer>,
    pub log_floor: f64,
}

impl InferenceModel {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = TrainCheckpoint::load(path)?;
        let classes = ClassMap::parse(
            ck.meta
                .get("classes")
                .ok_or_else(|| Error::Format("checkpoint has no class list".into()))?,
        )?;
        let log_floor = match ck.meta.get("features.log_floor") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Format("bad features.log_floor".into()))?,
            None => FrontendConfig::default().log_floor,
        };
        Ok(InferenceModel {
            standardizer: Standardizer::from_meta(&ck.meta)?,
            models: ck.models,
            classes,
            log_floor,
        })
    }

    pub fn detect(&self, mel: &MelSpectrogram, cfg: &RunConfig) -> Result<Vec<Event>> {
        let x = model_features(mel, self.log_floor, self.standardizer.as_ref())?;
        detect_events(
            &x,
            &self.models.flm,
            &self.models.clm,
            &self.classes,
            &cfg.decode,
        )
    }
}

/// Clip names listed by a manifest of any kind, else every `.wav` in `dir`.
pub fn list_clips(dir: &Path, manifest: Option<&Path>) -> Result<Vec<String>> {
    if let Some(m) = manifest {
        let text = fs::read_to_string(m)?;
        let kind = match text.lines().next().unwrap_or("") {
            h if h.contains("onset") => ManifestKind::Strong,
            h if h.contains("event_label") => ManifestKind::Weak,
            _ => ManifestKind::Unlabeled,
        };
        return Ok(Manifest::parse(&text, kind, m)?.filenames());
    }
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
        .collect();
    names.sort();
    Ok(names)
}

/// Detected events for every clip, also written to `out` as a strong TSV.
pub fn stage_infer(
    model: &InferenceModel,
    cfg: &RunConfig,
    store: &FeatureStore,
    audio_dir: &Path,
    names: &[String],
    out: Option<&Path>,
    exec: Execution,
) -> Result<BTreeMap<String, Vec<Event>>> {
    let events = parallel::try_map(exec, names, |n| {
        model.detect(&store.mel(&audio_path(audio_dir, n))?, cfg)
    })?;
    let preds: BTreeMap<String, Vec<Event>> = names.iter().cloned().zip(events).collect();
    if let Some(p) = out {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(p, predictions_tsv(&preds))?;
    }
    Ok(preds)
}

/// Scores a prediction TSV against a reference TSV.
pub fn stage_evaluate(reference: &Path, estimated: &Path, cfg: &RunConfig) -> Result<EventScores> {
    let r = read_manifest(reference, ManifestKind::Strong)?.events_by_clip()?;
    let e = read_manifest(estimated, ManifestKind::Strong)?.events_by_clip()?;
    event_based_scores(&r, &e, &cfg.metric)
}
