//! Audio ingestion: WAV decoding, rate conversion and mean/variance normalization.

use std::path::Path;

use crate::error::{Error, Result};
use crate::protocol::SAMPLE_RATE_HZ;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, rate_hz: u32) -> Result<Self> {
        if rate_hz == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("non-finite audio sample".into()));
        }
        Ok(Self { samples, rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz as f64
    }

    /// Returns the clip at 16 kHz, resampling if needed.
    pub fn to_model_rate(self) -> Self {
        if self.rate_hz == SAMPLE_RATE_HZ {
            return self;
        }
        let samples = resample(&self.samples, self.rate_hz, SAMPLE_RATE_HZ);
        Self {
            samples,
            rate_hz: SAMPLE_RATE_HZ,
        }
    }

    /// Reads a 16-bit PCM WAV; multi-channel input is averaged down to mono
    /// and the result is brought to 16 kHz.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::Config(format!(
                "{}: expected 16-bit PCM, got {:?} {} bit",
                path.display(),
                spec.sample_format,
                spec.bits_per_sample
            )));
        }
        let channels = spec.channels.max(1) as usize;
        let raw = reader
            .samples::<i16>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let samples = raw
            .chunks(channels)
            .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
            .collect();
        Ok(Self::new(samples, spec.sample_rate)?.to_model_rate())
    }

    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample((s * 32767.0).round().clamp(-32768.0, 32767.0) as i16)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub clip: AudioClip,
    /// Set when the input had zero variance; the output is then only mean-shifted.
    pub degenerate: bool,
}

/// Zero-mean, unit-variance normalization using the population variance.
pub fn normalize_audio(clip: &AudioClip) -> Result<Normalized> {
    if clip.is_empty() {
        return Err(Error::EmptyInput("audio clip"));
    }
    let n = clip.len() as f64;
    let mean = clip.samples.iter().sum::<f64>() / n;
    let var = clip.samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let degenerate = var <= f64::EPSILON * mean.abs().max(1.0);
    let scale = if degenerate { 1.0 } else { var.sqrt().recip() };
    let samples = clip.samples.iter().map(|s| (s - mean) * scale).collect();
    Ok(Normalized {
        clip: AudioClip {
            samples,
            rate_hz: clip.rate_hz,
        },
        degenerate,
    })
}

const SINC_ZERO_CROSSINGS: usize = 16;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let a = std::f64::consts::PI * (x + 1.0);
    0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
}

/// Windowed-sinc polyphase rate conversion between integer rates.
pub fn resample(input: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz || input.is_empty() {
        return input.to_vec();
    }
    let g = gcd(from_hz, to_hz);
    let up = (to_hz / g) as usize;
    let down = (from_hz / g) as usize;
    // Cutoff relative to the input Nyquist; anti-aliasing when decimating.
    let cutoff = (to_hz as f64 / from_hz as f64).min(1.0);
    let half = (SINC_ZERO_CROSSINGS as f64 / cutoff).ceil() as usize;
    let taps = 2 * half;

    // phases[p][j] weights input sample (i + 1 - half + j) for output time i + p/up.
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (0..taps)
                .map(|j| {
                    let tau = frac - (j as f64 + 1.0 - half as f64);
                    cutoff * sinc(cutoff * tau) * blackman(tau / half as f64)
                })
                .collect()
        })
        .collect();

    let out_len = (input.len() * up).div_ceil(down);
    let n_in = input.len() as isize;
    (0..out_len)
        .map(|n| {
            let pos = n * down;
            let i = (pos / up) as isize;
            let filt = &phases[pos % up];
            let start = i + 1 - half as isize;
            filt.iter()
                .enumerate()
                .filter_map(|(j, &w)| {
                    let k = start + j as isize;
                    (0..n_in).contains(&k).then(|| w * input[k as usize])
                })
                .sum()
        })
        .collect()
}
