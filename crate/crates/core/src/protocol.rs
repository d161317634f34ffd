//! Fixed experimental protocol constants.
//!
//! Everything downstream (framing, windowing, scoring, training defaults)
//! reads these values from here, and reports echo them back via
//! [`ProtocolConstants`].

use serde::{Deserialize, Serialize};

/// Label and feature frame rate.
pub const FRAME_RATE_HZ: u32 = 50;
/// Audio rate after ingestion.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Samples per 20 ms frame hop.
pub const HOP_SAMPLES: usize = 320;
/// Samples per 25 ms analysis window.
pub const WINDOW_SAMPLES: usize = 400;
pub const N_MEL_BANDS: usize = 40;
pub const EMBEDDING_DIMS: usize = 768;
pub const FUSED_DIMS: usize = N_MEL_BANDS + EMBEDDING_DIMS;

pub const SNIPPET_SECONDS: f64 = 15.0;
pub const SNIPPET_FRAMES: usize = 750;
pub const TRAIN_STRIDE_SECONDS: f64 = 1.0;

pub const TOLERANCE_FRAMES: usize = 10;
pub const MIN_OVERLAP_RATIO: f64 = 0.30;
pub const TAIL_MASK_FRAMES: usize = 50;

pub const BATCH_SIZE: usize = 64;
pub const LEARNING_RATE: f64 = 1e-4;

pub const SPLIT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Snapshot of the protocol, embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConstants {
    pub frame_rate_hz: u32,
    pub snippet_frames: usize,
    pub train_stride_s: f64,
    pub tolerance_frames: usize,
    pub min_overlap_ratio: f64,
    pub tail_mask_frames: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Exertion levels mapped to `Low`; the rest are `High`.
    pub exertion_low_levels: Vec<u8>,
    pub exertion_high_levels: Vec<u8>,
}

impl Default for ProtocolConstants {
    fn default() -> Self {
        Self {
            frame_rate_hz: FRAME_RATE_HZ,
            snippet_frames: SNIPPET_FRAMES,
            train_stride_s: TRAIN_STRIDE_SECONDS,
            tolerance_frames: TOLERANCE_FRAMES,
            min_overlap_ratio: MIN_OVERLAP_RATIO,
            tail_mask_frames: TAIL_MASK_FRAMES,
            batch_size: BATCH_SIZE,
            learning_rate: LEARNING_RATE,
            exertion_low_levels: vec![1, 2],
            exertion_high_levels: vec![3, 4, 5],
        }
    }
}
