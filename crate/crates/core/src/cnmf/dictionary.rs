//! Per-class dictionaries and pseudo strong labels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, Axis};

use super::{fit, fit_activation, Activation, CnmfConfig, ConvolutiveBasis};
use crate::data::ClassMap;
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::parallel::{self, Execution};
use crate::tensor_io::{Tensor, TensorFile};

/// Frames (columns) of a clip that contain the event of interest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    keep: Vec<bool>,
}

impl FrameMask {
    pub fn new(keep: Vec<bool>) -> Self {
        FrameMask { keep }
    }

    /// Mask of frames `[start, end)` out of `n`.
    pub fn span(n: usize, start: usize, end: usize) -> Self {
        FrameMask {
            keep: (0..n).map(|i| i >= start && i < end).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.keep.iter().any(|&k| k)
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventDictionary {
    pub class_label: String,
    pub bases: ConvolutiveBasis,
}

/// Frames x classes, entries in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoStrongLabel {
    pub labels: Array2<u8>,
}

impl PseudoStrongLabel {
    pub fn to_f64(&self) -> Array2<f64> {
        self.labels.mapv(f64::from)
    }
}

/// Bins x frames, scaled so the largest entry is 1.
pub(crate) fn cnmf_input(m: &MelSpectrogram) -> Result<Array2<f64>> {
    if m.is_log {
        return Err(Error::config("CNMF needs a pre-log mel spectrogram"));
    }
    let v = m.values.t().to_owned();
    super::check_nonnegative(&v, "mel spectrogram")?;
    let peak = v.iter().copied().fold(0.0, f64::max);
    Ok(if peak > 0.0 { v / peak } else { v })
}

/// Fit each clip on its masked frames only, concatenate the per-clip bases
/// along the component axis and L1-normalize each component over bins and
/// shifts. Clips whose mask selects nothing are skipped.
pub fn extract_event_dictionary(
    class_label: &str,
    clips: &[(MelSpectrogram, FrameMask)],
    cfg: &CnmfConfig,
    exec: Execution,
) -> Result<EventDictionary> {
    cfg.validate()?;
    let indexed: Vec<(usize, &(MelSpectrogram, FrameMask))> = clips.iter().enumerate().collect();
    let parts = parallel::try_map(exec, &indexed, |&(i, (mel, mask))| {
        if mask.len() != mel.n_frames() {
            return Err(Error::shape(format!(
                "mask has {} frames, clip has {}",
                mask.len(),
                mel.n_frames()
            )));
        }
        if mask.is_empty() {
            log::warn!("{class_label}: clip {i} has an empty mask, skipped");
            return Ok(None);
        }
        let v = cnmf_input(mel)?;
        let kept: Vec<usize> = (0..mask.len()).filter(|&j| mask.as_slice()[j]).collect();
        let v = v.select(Axis(1), &kept);
        let clip_cfg = CnmfConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let (mut basis, _) = fit(&v, &clip_cfg)?;
        basis.normalize_components();
        Ok(Some(basis))
    })?;
    let parts: Vec<ConvolutiveBasis> = parts.into_iter().flatten().collect();
    if parts.is_empty() {
        return Err(Error::config(format!(
            "no usable clips for class `{class_label}`"
        )));
    }
    Ok(EventDictionary {
        class_label: class_label.to_string(),
        bases: ConvolutiveBasis::concat(&parts)?,
    })
}

/// Fit only the activation of `mel` against a fixed dictionary.
pub fn infer_activation(
    mel: &MelSpectrogram,
    dict: &EventDictionary,
    cfg: &CnmfConfig,
) -> Result<Activation> {
    let v = cnmf_input(mel)?;
    if v.nrows() != dict.bases.n_bins() {
        return Err(Error::shape(format!(
            "clip has {} bins, dictionary `{}` has {}",
            v.nrows(),
            dict.class_label,
            dict.bases.n_bins()
        )));
    }
    Ok(Activation {
        h: fit_activation(&dict.bases, &v, cfg.iterations, cfg.h_update, cfg.seed),
    })
}

/// Frame `n` is active iff the largest component activation exceeds
/// `threshold`.
pub fn binarize_activation(h: &Activation, threshold: f64) -> Vec<bool> {
    h.h.columns()
        .into_iter()
        .map(|c| c.iter().any(|&x| x > threshold))
        .collect()
}

pub fn build_pseudo_label(
    clip: &MelSpectrogram,
    weak_tags: &BTreeSet<String>,
    dicts: &BTreeMap<String, EventDictionary>,
    classes: &ClassMap,
    cfg: &CnmfConfig,
) -> Result<PseudoStrongLabel> {
    if weak_tags.is_empty() {
        return Err(Error::InvalidEvent("weak clip carries no tags".into()));
    }
    let mut labels = Array2::zeros((clip.n_frames(), classes.len()));
    for tag in weak_tags {
        let c = classes.index_of(tag)?;
        let dict = dicts
            .get(tag)
            .ok_or_else(|| Error::MissingDictionary(tag.clone()))?;
        let h = infer_activation(clip, dict, cfg)?;
        for (n, active) in binarize_activation(&h, cfg.threshold)
            .into_iter()
            .enumerate()
        {
            labels[[n, c]] = u8::from(active);
        }
    }
    Ok(PseudoStrongLabel { labels })
}

/// Stored as tensor `W` of shape `[T, m, r]` with `class`, `m`, `r`, `T`
/// metadata.
pub fn save_dictionary(dict: &EventDictionary, path: impl AsRef<Path>) -> Result<()> {
    let b = &dict.bases;
    let mut f = TensorFile::new();
    f.set_meta("kind", "event_dictionary");
    f.set_meta("class", &dict.class_label);
    f.set_meta("m", b.n_bins());
    f.set_meta("r", b.n_components());
    f.set_meta("T", b.n_shifts());
    let data = b.slices().iter().flat_map(|w| w.iter().copied()).collect();
    f.push(Tensor::new(
        "W",
        vec![b.n_shifts(), b.n_bins(), b.n_components()],
        data,
    )?);
    f.save(path)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<EventDictionary> {
    let f = TensorFile::load(path)?;
    let (m, r, t): (usize, usize, usize) =
        (f.meta_parse("m")?, f.meta_parse("r")?, f.meta_parse("T")?);
    let w = f.get("W")?;
    if w.shape != [t, m, r] {
        return Err(Error::Format(format!(
            "W has shape {:?}, metadata says [{t}, {m}, {r}]",
            w.shape
        )));
    }
    let slices = w
        .data
        .chunks_exact(m * r)
        .map(|c| Array2::from_shape_vec((m, r), c.to_vec()).unwrap())
        .collect();
    Ok(EventDictionary {
        class_label: f.meta("class")?.to_string(),
        bases: ConvolutiveBasis::new(slices)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnmf::{init_factors, kl_divergence, reconstruct};
    use ndarray::array;

    fn mel_from_bins_by_frames(v: &Array2<f64>) -> MelSpectrogram {
        MelSpectrogram {
            values: v.t().to_owned(),
            is_log: false,
        }
    }

    #[test]
    fn binarize_uses_component_max() {
        let h = Activation {
            h: array![[0.05, 0.09, 0.0], [0.3, 0.09, 0.0]],
        };
        assert_eq!(binarize_activation(&h, 0.1), vec![true, false, false]);
    }

    #[test]
    fn mask_selects_leading_half() {
        let mask = FrameMask::span(640, 0, 320);
        assert_eq!(mask.count(), 320);
        assert!(mask.as_slice()[..320].iter().all(|&k| k));
        assert!(FrameMask::new(vec![false; 4]).is_empty());
    }

    #[test]
    fn dictionary_concatenates_components() {
        let clips: Vec<_> = (0..3)
            .map(|s| {
                let (b, h) = init_factors(6, 20, 2, 2, s);
                let v = reconstruct(&b, &h).unwrap();
                (mel_from_bins_by_frames(&v), FrameMask::span(20, 0, 12))
            })
            .collect();
        let cfg = CnmfConfig {
            components: 4,
            shifts: 2,
            iterations: 5,
            ..Default::default()
        };
        let d = extract_event_dictionary("Dog", &clips, &cfg, Execution::Parallel).unwrap();
        assert_eq!(d.bases.n_components(), 12);
        assert_eq!(d.bases.n_shifts(), 2);
        for k in 0..12 {
            let s: f64 = d.bases.slices().iter().map(|w| w.column(k).sum()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let seq = extract_event_dictionary("Dog", &clips, &cfg, Execution::Sequential).unwrap();
        assert_eq!(d, seq);
    }

    #[test]
    fn empty_mask_clip_is_skipped() {
        let (b, h) = init_factors(4, 10, 1, 1, 0);
        let mel = mel_from_bins_by_frames(&reconstruct(&b, &h).unwrap());
        let clips = vec![
            (mel.clone(), FrameMask::new(vec![false; 10])),
            (mel, FrameMask::span(10, 2, 8)),
        ];
        let cfg = CnmfConfig {
            components: 2,
            shifts: 1,
            iterations: 3,
            ..Default::default()
        };
        let d = extract_event_dictionary("x", &clips, &cfg, Execution::Sequential).unwrap();
        assert_eq!(d.bases.n_components(), 2);
        let only_empty = vec![clips[0].clone()];
        assert!(extract_event_dictionary("x", &only_empty, &cfg, Execution::Sequential).is_err());
    }

    fn two_template_dictionary() -> EventDictionary {
        // bins 0-2 and bins 5-7 carry two disjoint two-shift templates
        let mut w0 = Array2::zeros((8, 2));
        let mut w1 = Array2::zeros((8, 2));
        for i in 0..3 {
            w0[[i, 0]] = 0.1 + 0.05 * i as f64;
            w1[[i, 0]] = 0.2 - 0.05 * i as f64;
            w0[[5 + i, 1]] = 0.15;
            w1[[5 + i, 1]] = 0.05 + 0.1 * (i % 2) as f64;
        }
        let mut bases = ConvolutiveBasis::new(vec![w0, w1]).unwrap();
        bases.normalize_components();
        EventDictionary {
            class_label: "Tone".into(),
            bases,
        }
    }

    #[test]
    fn activation_recovers_self_generated_clip() {
        let dict = two_template_dictionary();
        let h = Array2::from_shape_fn((2, 30), |(k, j)| {
            if (j / 5 + k) % 2 == 0 {
                0.5 + 0.1 * (j % 3) as f64
            } else {
                0.0
            }
        });
        let v = reconstruct(&dict.bases, &Activation { h }).unwrap();
        let v = &v / v.iter().copied().fold(0.0, f64::max);
        let cfg = CnmfConfig {
            iterations: 2000,
            ..Default::default()
        };
        let a = infer_activation(&mel_from_bins_by_frames(&v), &dict, &cfg).unwrap();
        let approx = reconstruct(&dict.bases, &a).unwrap();
        assert!(
            kl_divergence(&v, &approx) < 1e-6,
            "{}",
            kl_divergence(&v, &approx)
        );
    }

    #[test]
    fn disjoint_support_gives_zero_activation() {
        let dict = two_template_dictionary();
        let mut v = Array2::zeros((8, 12));
        for j in 0..12 {
            v[[3, j]] = 1.0;
            v[[4, j]] = 0.5;
        }
        let cfg = CnmfConfig {
            iterations: 20,
            ..Default::default()
        };
        let a = infer_activation(&mel_from_bins_by_frames(&v), &dict, &cfg).unwrap();
        assert!(a.h.iter().all(|&x| x < 1e-3));

        let zero = MelSpectrogram {
            values: Array2::zeros((12, 8)),
            is_log: false,
        };
        let a = infer_activation(&zero, &dict, &cfg).unwrap();
        assert!(a.h.iter().all(|&x| x < 1e-3));
    }

    #[test]
    fn infer_rejects_mismatched_bins_and_log_input() {
        let dict = two_template_dictionary();
        let mel = MelSpectrogram {
            values: Array2::ones((5, 9)),
            is_log: false,
        };
        assert!(infer_activation(&mel, &dict, &CnmfConfig::default()).is_err());
        let log = MelSpectrogram {
            values: Array2::ones((5, 8)),
            is_log: true,
        };
        assert!(infer_activation(&log, &dict, &CnmfConfig::default()).is_err());
    }

    #[test]
    fn pseudo_label_gates_on_weak_tags() {
        let classes = ClassMap::new(["A", "B", "C"].map(String::from).to_vec()).unwrap();
        let dict = two_template_dictionary();
        let mut dicts = BTreeMap::new();
        for c in ["A", "B"] {
            dicts.insert(
                c.to_string(),
                EventDictionary {
                    class_label: c.into(),
                    ..dict.clone()
                },
            );
        }
        let mut v = Array2::zeros((8, 20));
        for j in 4..12 {
            for i in 0..3 {
                v[[i, j]] = 1.0;
            }
        }
        let mel = mel_from_bins_by_frames(&v);
        let cfg = CnmfConfig::default();
        let tags: BTreeSet<String> = ["A", "B"].map(String::from).into();
        let p = build_pseudo_label(&mel, &tags, &dicts, &classes, &cfg).unwrap();
        assert_eq!(p.labels.dim(), (20, 3));
        assert!(p.labels.column(2).iter().all(|&x| x == 0));
        assert!(p.labels.iter().all(|&x| x <= 1));
        assert_eq!(p.labels[[6, 0]], 1);
        assert_eq!(p.labels[[16, 0]], 0);

        let silent = MelSpectrogram {
            values: Array2::zeros((20, 8)),
            is_log: false,
        };
        let p = build_pseudo_label(&silent, &tags, &dicts, &classes, &cfg).unwrap();
        assert!(p.labels.iter().all(|&x| x == 0));

        let tags_c: BTreeSet<String> = ["C".to_string()].into();
        assert!(matches!(
            build_pseudo_label(&mel, &tags_c, &dicts, &classes, &cfg),
            Err(Error::MissingDictionary(c)) if c == "C"
        ));
    }

    #[test]
    fn dictionary_file_round_trip() {
        let dict = two_template_dictionary();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tone.sedt");
        save_dictionary(&dict, &p).unwrap();
        assert_eq!(load_dictionary(&p).unwrap(), dict);
    }
}
