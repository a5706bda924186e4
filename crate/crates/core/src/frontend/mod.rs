//! Fixed-shape log-mel front end.
//!
//! Every clip is brought to 22050 Hz and exactly 10 s, then turned into a
//! 640 x 64 mel power spectrogram (Hann window of 2048, hop 345, centered
//! frames with reflection padding). The log is taken later, after pseudo
//! labeling, because CNMF needs the nonnegative power values.

mod audio;
mod mel;

pub use audio::{read_wav, resample, write_wav};
pub use mel::{compute_mel, hann_window, hz_to_mel, mel_filterbank, mel_to_hz};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22050;
pub const CLIP_SAMPLES: usize = 220_500;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub window_size: usize,
    pub hop_length: usize,
    pub mel_bins: usize,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            window_size: 2048,
            hop_length: 345,
            mel_bins: 64,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_size > self.hop_length && self.hop_length > 0) {
            return Err(Error::config("need window_size > hop_length > 0"));
        }
        if self.mel_bins == 0 {
            return Err(Error::config("mel_bins must be at least 1"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    /// Frames produced for `n_samples` with centered framing.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop_length + 1
    }
}

/// Frames x mel bins. `is_log` tracks whether [`log_scale`] was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub is_log: bool,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Truncate or zero-pad (at the end) to exactly [`CLIP_SAMPLES`].
pub fn normalize_duration(w: &Waveform) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let mut samples = w.samples.clone();
    samples.resize(CLIP_SAMPLES, 0.0);
    Ok(Waveform::new(samples, w.sample_rate))
}

/// Read a PCM file and bring it to 22050 Hz mono, 10 s.
pub fn load_clip(path: impl AsRef<std::path::Path>) -> Result<Waveform> {
    let w = read_wav(path)?;
    let w = if w.sample_rate == SAMPLE_RATE {
        w
    } else {
        resample(&w, SAMPLE_RATE)
    };
    normalize_duration(&w)
}

/// `ln(max(x, floor))` elementwise.
pub fn log_scale(m: &MelSpectrogram, floor: f64) -> Result<MelSpectrogram> {
    if !(floor > 0.0) {
        return Err(Error::config(format!(
            "log floor must be positive, got {floor}"
        )));
    }
    if m.is_log {
        return Err(Error::config("spectrogram is already log-scaled"));
    }
    Ok(MelSpectrogram {
        values: m.values.mapv(|x| x.max(floor).ln()),
        is_log: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn wave(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (i % 7) as f64 + 1.0).collect(), SAMPLE_RATE)
    }

    #[test]
    fn exact_length_is_unchanged() {
        let w = wave(CLIP_SAMPLES);
        assert_eq!(normalize_duration(&w).unwrap(), w);
    }

    #[test]
    fn long_clip_keeps_head() {
        let w = wave(264_600);
        let out = normalize_duration(&w).unwrap();
        assert_eq!(out.samples, w.samples[..CLIP_SAMPLES]);
    }

    #[test]
    fn short_clip_zero_padded() {
        let w = wave(110_250);
        let out = normalize_duration(&w).unwrap();
        assert_eq!(out.len(), CLIP_SAMPLES);
        assert_eq!(out.samples[..110_250], w.samples[..]);
        assert!(out.samples[110_250..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(
            normalize_duration(&Waveform::new(vec![], SAMPLE_RATE)),
            Err(Error::EmptyWaveform)
        ));
    }

    #[test]
    fn log_scale_values() {
        let m = MelSpectrogram {
            values: array![[std::f64::consts::E, 0.0, 1.0]],
            is_log: false,
        };
        let l = log_scale(&m, 1e-10).unwrap();
        assert!(l.is_log);
        assert!((l.values[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((l.values[[0, 1]] - (-23.025850929940457)).abs() < 1e-12);
        assert_eq!(l.values[[0, 2]], 0.0);
        assert!(log_scale(&m, 0.0).is_err());
        assert!(log_scale(&l, 1e-10).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FrontendConfig::default().validate().is_ok());
        let bad = FrontendConfig {
            hop_length: 4096,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(FrontendConfig::default().n_frames(CLIP_SAMPLES), 640);
    }
}
