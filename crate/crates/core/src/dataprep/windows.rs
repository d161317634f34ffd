use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::RecordingMeta;
use crate::protocol::{FRAME_RATE_HZ, SNIPPET_FRAMES, SNIPPET_SECONDS};

/// A 15 s snippet of one recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub recording_id: String,
    pub start_s: f64,
    pub length_s: f64,
    pub frame_start: usize,
    pub frame_end: usize,
}

impl Window {
    pub fn frames(&self) -> usize {
        self.frame_end - self.frame_start
    }
}

/// Slides a 15 s window over the recording with the given stride.
///
/// Recordings shorter than one window produce no windows.
pub fn segment_windows(meta: &RecordingMeta, stride_s: f64) -> Result<Vec<Window>> {
    if !(stride_s > 0.0) || !stride_s.is_finite() {
        return Err(Error::InvalidParameter(format!("stride {stride_s} must be > 0")));
    }
    let total_frames = meta.frames(FRAME_RATE_HZ);
    if meta.duration_s + 1e-9 < SNIPPET_SECONDS || total_frames < SNIPPET_FRAMES {
        log::warn!(
            "recording {} is {:.2} s, shorter than one {SNIPPET_SECONDS} s window; skipped",
            meta.id,
            meta.duration_s
        );
        return Ok(Vec::new());
    }
    let count = ((meta.duration_s - SNIPPET_SECONDS) / stride_s + 1e-9).floor() as usize + 1;
    let windows = (0..count)
        .map(|i| {
            let start_s = i as f64 * stride_s;
            let frame_start = ((start_s * FRAME_RATE_HZ as f64).round() as usize)
                .min(total_frames - SNIPPET_FRAMES);
            Window {
                recording_id: meta.id.clone(),
                start_s,
                length_s: SNIPPET_SECONDS,
                frame_start,
                frame_end: frame_start + SNIPPET_FRAMES,
            }
        })
        .collect();
    Ok(windows)
}
