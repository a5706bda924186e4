//! Desk-scale stand-in for DESED: 10 s clips holding 1-3 synthetic events,
//! each class confined to its own frequency band.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, ClassMap, Event, Manifest};
use crate::error::{Error, Result};
use crate::frontend::{hz_to_mel, mel_to_hz, write_wav, Waveform, CLIP_SAMPLES, SAMPLE_RATE};
use crate::parallel::{self, Execution};
use crate::CLIP_SECONDS;

const CLASS_NAMES: [&str; 10] = [
    "Alarm", "Birdsong", "Rattle", "Drone", "Siren", "Static", "Whistle", "Trill", "Rustle",
    "Chime",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyArchetype {
    /// Steady partials spread geometrically across the band, with slight
    /// vibrato.
    Tone { partials: usize },
    /// Repeating sweep across the band, `period` seconds each; a
    /// non-rising chirp glides up and back down.
    Chirp { period: f64, rising: bool },
    /// Band-limited noise with tremolo.
    NoiseBurst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub n_classes: usize,
    pub n_strong: usize,
    pub n_weak: usize,
    pub n_unlabeled: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n_classes: 5,
            n_strong: 20,
            n_weak: 20,
            n_unlabeled: 40,
            n_validation: 0,
            n_test: 0,
            min_events: 1,
            max_events: 3,
            min_duration: 0.5,
            max_duration: 4.0,
            noise_floor: 0.002,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_classes > CLASS_NAMES.len() {
            return Err(Error::config(format!(
                "toy class count must be 1..={}",
                CLASS_NAMES.len()
            )));
        }
        if self.n_strong == 0 || self.n_weak == 0 || self.n_unlabeled == 0 {
            return Err(Error::config("toy subsets need at least one clip each"));
        }
        if self.min_events == 0 || self.min_events > self.max_events {
            return Err(Error::config("need 1 <= min_events <= max_events"));
        }
        if !(self.min_duration > 0.0
            && self.min_duration <= self.max_duration
            && self.max_duration < CLIP_SECONDS)
        {
            return Err(Error::config("need 0 < min_duration <= max_duration < 10"));
        }
        Ok(())
    }

    pub fn classes(&self) -> ClassMap {
        ClassMap::new(
            CLASS_NAMES[..self.n_classes]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .expect("static names")
    }

    /// Classes sharing a family still differ in local texture, not only in band.
    pub fn archetype(&self, class: usize) -> ToyArchetype {
        match class % 5 {
            0 => ToyArchetype::Tone { partials: 3 },
            1 => ToyArchetype::Chirp {
                period: 0.12,
                rising: true,
            },
            2 => ToyArchetype::NoiseBurst,
            3 => ToyArchetype::Tone { partials: 8 },
            _ => ToyArchetype::Chirp {
                period: 1.0,
                rising: false,
            },
        }
    }

    /// Frequency band of a class: the central 60% of its slice of an even
    /// mel-scale partition of 150-9500 Hz.
    pub fn band(&self, class: usize) -> (f64, f64) {
        let (lo, hi) = (hz_to_mel(150.0), hz_to_mel(9500.0));
        let width = (hi - lo) / self.n_classes as f64;
        let start = lo + width * (class as f64 + 0.2);
        (mel_to_hz(start), mel_to_hz(start + 0.6 * width))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Subset {
    Strong,
    Weak,
    Unlabeled,
    Validation,
    Test,
}

impl Subset {
    fn name(self) -> &'static str {
        match self {
            Subset::Strong => "strong",
            Subset::Weak => "weak",
            Subset::Unlabeled => "unlabeled",
            Subset::Validation => "validation",
            Subset::Test => "test",
        }
    }

    fn code(self) -> u64 {
        self as u64 + 1
    }
}

/// Everything `synth_toy_dataset` produced, with paths relative to `root`.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub root: PathBuf,
    pub classes: ClassMap,
    pub strong: BTreeMap<String, Vec<Event>>,
    pub weak: BTreeMap<String, BTreeSet<String>>,
    /// Hidden strong ground truth of the weak subset.
    pub weak_truth: BTreeMap<String, Vec<Event>>,
    pub unlabeled: Vec<String>,
    pub validation: BTreeMap<String, Vec<Event>>,
    pub test: BTreeMap<String, Vec<Event>>,
}

impl ToyDataset {
    pub fn audio_dir(&self, subset: &str) -> PathBuf {
        self.root.join("audio").join(subset)
    }

    pub fn manifest_path(&self, subset: &str) -> PathBuf {
        self.root.join("metadata").join(format!("{subset}.tsv"))
    }

    pub fn weak_truth_path(&self) -> PathBuf {
        self.root
            .join("metadata")
            .join("hidden")
            .join("weak_strong.tsv")
    }
}

fn clip_rng(seed: u64, subset: Subset, idx: usize) -> ChaCha8Rng {
    let mixed = seed ^ (subset.code() << 48) ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mixed)
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn sample_events(spec: &ToySpec, rng: &mut ChaCha8Rng) -> Vec<(usize, Event, f64)> {
    let classes = spec.classes();
    let count = rng.random_range(spec.min_events..=spec.max_events);
    let mut out: Vec<(usize, Event, f64)> = Vec::new();
    for _ in 0..count {
        for _attempt in 0..50 {
            let c = rng.random_range(0..spec.n_classes);
            let dur = round_ms(rng.random_range(spec.min_duration..=spec.max_duration));
            let onset = round_ms(rng.random_range(0.0..=(CLIP_SECONDS - dur)));
            let offset = round_ms(onset + dur).min(CLIP_SECONDS);
            // same-class events stay apart so references never overlap
            let clash = out
                .iter()
                .any(|(oc, e, _)| *oc == c && onset < e.offset + 0.3 && e.onset < offset + 0.3);
            if clash {
                continue;
            }
            let gain = rng.random_range(0.15..0.3);
            out.push((
                c,
                Event::new(classes.label(c), onset, offset).unwrap(),
                gain,
            ));
            break;
        }
    }
    out.sort_by(|a, b| a.1.onset.total_cmp(&b.1.onset).then(a.0.cmp(&b.0)));
    out
}

fn render_event(
    spec: &ToySpec,
    class: usize,
    event: &Event,
    gain: f64,
    rng: &mut ChaCha8Rng,
    out: &mut [f64],
) {
    let sr = SAMPLE_RATE as f64;
    let (lo, hi) = spec.band(class);
    let start = (event.onset * sr).round() as usize;
    let end = ((event.offset * sr).round() as usize).min(out.len());
    let n = end - start;
    let fade = (0.01 * sr) as usize;
    let envelope = |i: usize| -> f64 {
        let a = (i as f64 / fade as f64).min(1.0);
        let b = ((n - i) as f64 / fade as f64).min(1.0);
        a.min(b)
    };
    match spec.archetype(class) {
        ToyArchetype::Tone { partials } => {
            let freqs: Vec<f64> = (0..partials)
                .map(|k| {
                    let q = 0.15 + 0.7 * k as f64 / (partials.max(2) - 1) as f64;
                    lo * (hi / lo).powf(q)
                })
                .collect();
            let mut phases: Vec<f64> = (0..partials)
                .map(|_| rng.random_range(0.0..2.0 * PI))
                .collect();
            let norm = (1.0 / partials as f64).sqrt();
            for i in 0..n {
                let t = i as f64 / sr;
                let vibrato = 1.0 + 0.02 * (2.0 * PI * 5.0 * t).sin();
                let mut s = 0.0;
                for (p, f) in phases.iter_mut().zip(&freqs) {
                    *p += 2.0 * PI * f * vibrato / sr;
                    s += p.sin();
                }
                out[start + i] += gain * envelope(i) * norm * s;
            }
        }
        ToyArchetype::Chirp { period, rising } => {
            let mut phase = 0.0;
            for i in 0..n {
                let t = i as f64 / sr;
                let frac = (t / period).fract();
                let frac = if rising {
                    frac
                } else {
                    1.0 - (2.0 * frac - 1.0).abs()
                };
                let f = lo + (hi - lo) * frac;
                phase += 2.0 * PI * f / sr;
                out[start + i] += gain * envelope(i) * phase.sin();
            }
        }
        ToyArchetype::NoiseBurst => {
            let k = 24;
            let partials: Vec<(f64, f64)> = (0..k)
                .map(|_| (rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI)))
                .collect();
            let norm = (2.0 / k as f64).sqrt();
            for i in 0..n {
                let t = i as f64 / sr;
                let tremolo = 1.0 - 0.4 * (0.5 + 0.5 * (2.0 * PI * 6.0 * t).sin());
                let s: f64 = partials
                    .iter()
                    .map(|&(f, p)| (2.0 * PI * f * t + p).sin())
                    .sum();
                out[start + i] += gain * envelope(i) * tremolo * norm * s;
            }
        }
    }
}

fn render_clip(spec: &ToySpec, subset: Subset, idx: usize) -> (Waveform, Vec<Event>) {
    let mut rng = clip_rng(spec.seed, subset, idx);
    let events = sample_events(spec, &mut rng);
    let mut samples = vec![0.0; CLIP_SAMPLES];
    for (c, e, gain) in &events {
        render_event(spec, *c, e, *gain, &mut rng, &mut samples);
    }
    if spec.noise_floor > 0.0 {
        let noise = Normal::new(0.0, spec.noise_floor).expect("positive std");
        for s in &mut samples {
            *s += noise.sample(&mut rng);
        }
    }
    (
        Waveform::new(samples, SAMPLE_RATE),
        events.into_iter().map(|(_, e, _)| e).collect(),
    )
}

/// One clip of the named subset, without touching the filesystem.
pub fn toy_clip(spec: &ToySpec, subset: &str, idx: usize) -> Result<(Waveform, Vec<Event>)> {
    let s = match subset {
        "strong" => Subset::Strong,
        "weak" => Subset::Weak,
        "unlabeled" => Subset::Unlabeled,
        "validation" => Subset::Validation,
        "test" => Subset::Test,
        other => return Err(Error::config(format!("unknown toy subset `{other}`"))),
    };
    Ok(render_clip(spec, s, idx))
}

fn write_subset(
    spec: &ToySpec,
    root: &Path,
    subset: Subset,
    count: usize,
    exec: Execution,
) -> Result<BTreeMap<String, Vec<Event>>> {
    let dir = root.join("audio").join(subset.name());
    fs::create_dir_all(&dir)?;
    let clips = parallel::try_map_range(exec, count, |i| -> Result<(String, Vec<Event>)> {
        let (wave, events) = render_clip(spec, subset, i);
        let name = format!("{}_{i:04}.wav", subset.name());
        write_wav(dir.join(&name), &wave)?;
        Ok((name, events))
    })?;
    Ok(clips.into_iter().collect())
}

/// Render every subset to `root/audio/<subset>/` and write
/// `root/metadata/{strong,weak,unlabeled}.tsv` (plus validation/test when
/// requested). Weak-subset ground truth goes to
/// `root/metadata/hidden/weak_strong.tsv`.
pub fn synth_toy_dataset(
    spec: &ToySpec,
    root: impl AsRef<Path>,
    exec: Execution,
) -> Result<ToyDataset> {
    spec.validate()?;
    let root = root.as_ref().to_path_buf();
    let strong = write_subset(spec, &root, Subset::Strong, spec.n_strong, exec)?;
    let weak_truth = write_subset(spec, &root, Subset::Weak, spec.n_weak, exec)?;
    let unlabeled: Vec<String> =
        write_subset(spec, &root, Subset::Unlabeled, spec.n_unlabeled, exec)?
            .into_keys()
            .collect();
    let validation = if spec.n_validation > 0 {
        write_subset(spec, &root, Subset::Validation, spec.n_validation, exec)?
    } else {
        BTreeMap::new()
    };
    let test = if spec.n_test > 0 {
        write_subset(spec, &root, Subset::Test, spec.n_test, exec)?
    } else {
        BTreeMap::new()
    };
    let weak: BTreeMap<String, BTreeSet<String>> = weak_truth
        .iter()
        .map(|(f, evs)| (f.clone(), evs.iter().map(|e| e.label.clone()).collect()))
        .collect();

    let ds = ToyDataset {
        root,
        classes: spec.classes(),
        strong,
        weak,
        weak_truth,
        unlabeled,
        validation,
        test,
    };
    write_manifest(&Manifest::strong(&ds.strong), ds.manifest_path("strong"))?;
    write_manifest(&Manifest::weak(&ds.weak), ds.manifest_path("weak"))?;
    write_manifest(
        &Manifest::unlabeled(&ds.unlabeled),
        ds.manifest_path("unlabeled"),
    )?;
    write_manifest(&Manifest::strong(&ds.weak_truth), ds.weak_truth_path())?;
    if !ds.validation.is_empty() {
        write_manifest(
            &Manifest::strong(&ds.validation),
            ds.manifest_path("validation"),
        )?;
    }
    if !ds.test.is_empty() {
        write_manifest(&Manifest::strong(&ds.test), ds.manifest_path("test"))?;
    }
    fs::write(
        ds.root.join("metadata").join("classes.txt"),
        ds.classes.to_list() + "\n",
    )?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{compute_mel, mel_filterbank, FrontendConfig};

    #[test]
    fn bands_are_disjoint_and_ordered() {
        let spec = ToySpec {
            n_classes: 10,
            ..Default::default()
        };
        for c in 0..9 {
            let (lo, hi) = spec.band(c);
            let (lo2, _) = spec.band(c + 1);
            assert!(lo < hi && hi < lo2);
        }
    }

    #[test]
    fn events_stay_in_clip_and_same_class_never_overlaps() {
        let spec = ToySpec::default();
        for i in 0..100 {
            let (w, events) = toy_clip(&spec, "strong", i).unwrap();
            assert_eq!(w.len(), CLIP_SAMPLES);
            assert!((1..=3).contains(&events.len()));
            for (a, e) in events.iter().enumerate() {
                assert!(e.onset >= 0.0 && e.offset <= CLIP_SECONDS && e.onset < e.offset);
                for f in &events[a + 1..] {
                    if f.label == e.label {
                        assert!(f.onset >= e.offset || e.onset >= f.offset);
                    }
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = ToySpec::default();
        assert_eq!(
            toy_clip(&spec, "weak", 3).unwrap(),
            toy_clip(&spec, "weak", 3).unwrap()
        );
        assert_ne!(
            toy_clip(&spec, "weak", 3).unwrap().0,
            toy_clip(&spec, "weak", 4).unwrap().0
        );
    }

    #[test]
    fn tone_event_shows_up_in_its_band_and_interval() {
        let spec = ToySpec {
            noise_floor: 0.0,
            ..Default::default()
        };
        // find a clip with a tone (class 0) event
        let (w, events) = (0..200)
            .map(|i| toy_clip(&spec, "strong", i).unwrap())
            .find(|(_, evs)| evs.iter().any(|e| e.label == "Alarm"))
            .unwrap();
        let tone = events.iter().find(|e| e.label == "Alarm").unwrap();
        let cfg = FrontendConfig::default();
        let mel = compute_mel(&w, &cfg).unwrap();
        let fb = mel_filterbank(cfg.mel_bins, cfg.window_size, SAMPLE_RATE as f64);
        let (lo, hi) = spec.band(0);
        let k = |f: f64| (f * cfg.window_size as f64 / SAMPLE_RATE as f64).round() as usize;
        let band_bins: Vec<usize> = (0..cfg.mel_bins)
            .filter(|&b| (k(lo)..=k(hi)).any(|j| fb[[b, j]] > 0.0))
            .collect();
        let energy = |f: usize| band_bins.iter().map(|&b| mel.values[[f, b]]).sum::<f64>();
        let (a, b) = super::super::event_frames(tone.onset, tone.offset, 640);
        let inside = (a + 3..b.saturating_sub(3))
            .map(energy)
            .fold(f64::INFINITY, f64::min);
        // frames well clear of every Alarm event
        let outside = (0..640)
            .filter(|&f| {
                events.iter().filter(|e| e.label == "Alarm").all(|e| {
                    let (s, t) = super::super::event_frames(e.onset, e.offset, 640);
                    f + 4 < s || f > t + 4
                })
            })
            .map(energy)
            .fold(0.0, f64::max);
        assert!(
            inside > 100.0 * outside.max(1e-12),
            "inside {inside}, outside {outside}"
        );
    }

    #[test]
    fn dataset_files_and_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToySpec {
            n_strong: 3,
            n_weak: 2,
            n_unlabeled: 4,
            ..Default::default()
        };
        let ds = synth_toy_dataset(&spec, dir.path(), Execution::Parallel).unwrap();
        let wavs = walk(&dir.path().join("audio"));
        assert_eq!(wavs, 9);
        let manifests = fs::read_dir(dir.path().join("metadata"))
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "tsv")
            })
            .count();
        assert_eq!(manifests, 3);
        assert_eq!(ds.weak.len(), 2);
        assert!(ds.weak_truth_path().exists());
        assert!(synth_toy_dataset(
            &ToySpec { n_weak: 0, ..spec },
            dir.path(),
            Execution::Sequential
        )
        .is_err());
    }

    fn walk(p: &Path) -> usize {
        fs::read_dir(p)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                if p.is_dir() {
                    walk(&p)
                } else {
                    1
                }
            })
            .sum()
    }
}
