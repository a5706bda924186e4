use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::Result;

/// Read a PCM (or float) WAV file as mono samples in [-1, 1]. Multi-channel
/// files are averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
    };
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Write 16-bit PCM mono. Samples are clipped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

const ZERO_CROSSINGS: usize = 16;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(x: f64, half_width: f64) -> f64 {
    // x in [-half_width, half_width]
    let p = (x + half_width) / (2.0 * half_width);
    0.42 - 0.5 * (2.0 * PI * p).cos() + 0.08 * (4.0 * PI * p).cos()
}

/// Band-limited polyphase resampling with a Blackman-windowed sinc kernel.
/// The cutoff sits at the lower of the two Nyquist rates.
pub fn resample(w: &Waveform, target_rate: u32) -> Waveform {
    if w.sample_rate == target_rate || w.is_empty() {
        return Waveform::new(w.samples.clone(), target_rate);
    }
    let g = gcd(w.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (w.sample_rate as u64 / g) as usize;
    let cutoff = (target_rate as f64 / w.sample_rate as f64).min(1.0);
    let half = (ZERO_CROSSINGS as f64 / cutoff).ceil() as isize;
    let taps = (2 * half + 1) as usize;

    // phase p covers output positions whose fractional input offset is p/up
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (0..taps)
                .map(|j| {
                    let d = (j as isize - half) as f64 - frac;
                    if d.abs() >= half as f64 {
                        0.0
                    } else {
                        cutoff * sinc(cutoff * d) * blackman(d, half as f64)
                    }
                })
                .collect()
        })
        .collect();

    let n_out = (w.len() as u64 * up as u64).div_ceil(down as u64) as usize;
    let x = &w.samples;
    let out = (0..n_out)
        .map(|j| {
            let pos = j * down;
            let base = (pos / up) as isize;
            let kernel = &phases[pos % up];
            kernel
                .iter()
                .enumerate()
                .filter_map(|(t, &h)| {
                    let i = base + t as isize - half;
                    (i >= 0 && (i as usize) < x.len()).then(|| h * x[i as usize])
                })
                .sum()
        })
        .collect();
    Waveform::new(out, target_rate)
}
