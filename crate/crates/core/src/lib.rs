//! Pause-type detection and exertion classification for post-exercise speech.
//!
//! Frames are labelled at 50 Hz with one of four codes (`O`, `S`, `B`, `BS`).
//! The crate covers the whole path from audio to scored events: feature
//! extraction, windowing and splits, recurrent frame predictors with their
//! losses, post-processing of raw outputs, event matching, and ordinal
//! exertion classification.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod dataprep;
pub mod error;
pub mod evaluation;
pub mod exertion;
pub mod features;
pub mod labels;
pub mod losses;
pub mod manifest;
pub mod models;
pub mod pipeline;
pub mod postproc;
pub mod protocol;

pub use error::{Error, Result};
pub use features::{FeatureKind, FeatureMatrix};
pub use labels::{decode_events, encode_labels, FrameLabelSeq, PauseEvent, PauseType};
pub use manifest::{DatasetManifest, ManifestRecord, RecordingMeta, SpeechTask};
