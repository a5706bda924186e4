use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{FrontendConfig, MelSpectrogram, Waveform};
use crate::error::Result;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Triangular filters evenly spaced on the mel scale between 0 Hz and
/// Nyquist, each scaled to unit area in Hz. Shape: `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Array2<f64> {
    let n_freqs = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, n_freqs));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let scale = 2.0 / (hi - lo);
        for k in 0..n_freqs {
            let f = k as f64 * sample_rate / n_fft as f64;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            let w = rise.min(fall).max(0.0);
            fb[[m, k]] = w * scale;
        }
    }
    fb
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let idx = |i: isize| -> f64 {
        // numpy "reflect": edge sample not repeated
        let period = 2 * (n as isize - 1).max(1);
        let mut j = i.rem_euclid(period);
        if j >= n as isize {
            j = period - j;
        }
        x[j as usize]
    };
    (-(pad as isize)..(n + pad) as isize).map(idx).collect()
}

/// Mel power spectrogram, frames x mel bins. Power (not magnitude) so that
/// scaling the waveform by `c` scales every entry by `c^2`.
pub fn compute_mel(w: &Waveform, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    let n_fft = cfg.window_size;
    let padded = reflect_pad(&w.samples, n_fft / 2);
    let n_frames = cfg.n_frames(w.samples.len());
    let window = hann_window(n_fft);
    let fb = mel_filterbank(cfg.mel_bins, n_fft, w.sample_rate as f64);
    let n_freqs = n_fft / 2 + 1;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut power = Array2::<f64>::zeros((n_frames, n_freqs));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (f, mut row) in power.rows_mut().into_iter().enumerate() {
        let start = f * cfg.hop_length;
        for (b, (&x, &win)) in buf
            .iter_mut()
            .zip(padded[start..start + n_fft].iter().zip(&window))
        {
            *b = Complex::new(x * win, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in row.iter_mut().zip(&buf[..n_freqs]) {
            *p = c.norm_sqr();
        }
    }
    Ok(MelSpectrogram {
        values: power.dot(&fb.t()),
        is_log: false,
    })
}
