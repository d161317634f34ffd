//! Log mel filterbank energies and cepstra at the 50 Hz frame rate.
//!
//! Framing is a 25 ms periodic Hann window with a 20 ms hop, zero-padded to a
//! 512-point FFT. 40 triangular filters (peak 1) are spaced evenly on the HTK
//! mel scale between 0 Hz and 8 kHz. No pre-emphasis.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::audio::AudioClip;
use super::matrix::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::protocol::{FRAME_RATE_HZ, HOP_SAMPLES, N_MEL_BANDS, SAMPLE_RATE_HZ, WINDOW_SAMPLES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
    pub filter_shape: String,
    pub pre_emphasis: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: SAMPLE_RATE_HZ,
            window_samples: WINDOW_SAMPLES,
            hop_samples: HOP_SAMPLES,
            fft_size: 512,
            n_mels: N_MEL_BANDS,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
            filter_shape: "triangular".into(),
            pre_emphasis: None,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Reusable extractor holding the window, filterbank and FFT plan.
pub struct MelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    /// `n_mels x (fft_size/2 + 1)`
    filters: Array2<f64>,
    centers_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        if cfg.window_samples == 0 || cfg.window_samples > cfg.fft_size || cfg.hop_samples == 0 {
            return Err(Error::Config(format!(
                "bad framing: window {} hop {} fft {}",
                cfg.window_samples, cfg.hop_samples, cfg.fft_size
            )));
        }
        if !(cfg.fmax_hz > cfg.fmin_hz) || cfg.fmax_hz > cfg.sample_rate_hz as f64 / 2.0 {
            return Err(Error::Config(format!(
                "bad mel range {}..{} Hz",
                cfg.fmin_hz, cfg.fmax_hz
            )));
        }
        let n = cfg.window_samples;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let (filters, centers_hz) = triangular_filters(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg,
            window,
            filters,
            centers_hz,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn filters(&self) -> &Array2<f64> {
        &self.filters
    }

    /// Frame count for a clip: `round(duration * 50)`.
    pub fn target_frames(&self, n_samples: usize) -> usize {
        let duration = n_samples as f64 / self.cfg.sample_rate_hz as f64;
        (duration * FRAME_RATE_HZ as f64).round() as usize
    }

    /// Power spectra of all analysis frames, `frames x (fft/2 + 1)`.
    fn power_spectra(&self, samples: &[f64]) -> Array2<f64> {
        let win = self.cfg.window_samples;
        let hop = self.cfg.hop_samples;
        let n_frames = 1 + (samples.len() - win) / hop;
        let bins = self.cfg.fft_size / 2 + 1;
        let mut out = Array2::zeros((n_frames, bins));
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        for (f, mut row) in out.outer_iter_mut().enumerate() {
            let frame = &samples[f * hop..f * hop + win];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                b.re = x * w;
            }
            self.fft.process(&mut buf);
            for (r, c) in row.iter_mut().zip(&buf) {
                *r = c.norm_sqr();
            }
        }
        out
    }

    /// Log mel energies with exactly `round(duration * 50)` rows.
    pub fn log_mel(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        if clip.rate_hz() != self.cfg.sample_rate_hz {
            return Err(Error::InvalidParameter(format!(
                "clip at {} Hz, extractor expects {} Hz",
                clip.rate_hz(),
                self.cfg.sample_rate_hz
            )));
        }
        if clip.len() < self.cfg.window_samples {
            return Err(Error::AudioTooShort {
                samples: clip.len(),
                needed: self.cfg.window_samples,
            });
        }
        let power = self.power_spectra(clip.samples());
        let mut mel = power.dot(&self.filters.t());
        let floor = self.cfg.log_floor;
        mel.mapv_inplace(|e| e.max(floor).ln());
        Ok(fit_rows(mel, self.target_frames(clip.len())))
    }

    pub fn mfb(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.log_mel(clip)?, FeatureKind::Mfb)
    }

    pub fn mfcc(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        FeatureMatrix::new(dct_ii(self.log_mel(clip)?.view()), FeatureKind::Mfcc)
    }
}

/// Truncates, or pads by repeating the last row, to exactly `target` rows.
fn fit_rows(m: Array2<f64>, target: usize) -> Array2<f64> {
    let n = m.nrows();
    if n == target {
        return m;
    }
    Array2::from_shape_fn((target, m.ncols()), |(t, c)| m[[t.min(n - 1), c]])
}

fn triangular_filters(cfg: &MelConfig) -> (Array2<f64>, Vec<f64>) {
    let bins = cfg.fft_size / 2 + 1;
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
    let (mlo, mhi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut filters = Array2::zeros((cfg.n_mels, bins));
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            filters[[m, k]] = w;
        }
    }
    (filters, edges[1..=cfg.n_mels].to_vec())
}

/// Orthonormal type-II DCT along each row, keeping every coefficient.
pub fn dct_ii(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.ncols();
    let basis = Array2::from_shape_fn((n, n), |(k, i)| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    });
    x.dot(&basis.t())
}

/// Single-row convenience for [`dct_ii`].
pub fn dct_ii_vec(x: &[f64]) -> Array1<f64> {
    let m = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    dct_ii(m).row(0).to_owned()
}

/// Log mel filterbank matrix with the default front end.
pub fn compute_mfb(clip: &AudioClip) -> Result<FeatureMatrix> {
    MelExtractor::new(MelConfig::default())?.mfb(clip)
}

/// DCT-II cepstra of [`compute_mfb`]'s log mel matrix.
pub fn compute_mfcc(clip: &AudioClip) -> Result<FeatureMatrix> {
    MelExtractor::new(MelConfig::default())?.mfcc(clip)
}
