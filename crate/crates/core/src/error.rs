use std::path::PathBuf;

use crate::labels::{PauseEvent, PauseType};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("events overlap: {first:?} and {second:?}")]
    OverlappingEvents { first: PauseEvent, second: PauseEvent },

    #[error("event {event:?} lies outside [0, {frames})")]
    EventOutOfBounds { event: PauseEvent, frames: usize },

    #[error("invalid label code {0} (expected 0..=3)")]
    InvalidLabel(i64),

    #[error("invalid pause type name {0:?}")]
    InvalidPauseTypeName(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("audio too short: {samples} samples, need at least {needed}")]
    AudioTooShort { samples: usize, needed: usize },

    #[error("missing class weight for {0:?}")]
    MissingClassWeight(PauseType),

    #[error("non-binary target {0}")]
    NonBinaryTarget(f64),

    #[error("ordinal targets are not non-increasing in row {row}")]
    NonMonotoneOrdinal { row: usize },

    #[error("exertion level {0} outside [1, 5]")]
    ExertionOutOfRange(i64),

    #[error("not enough subjects: {subjects} for {splits} splits")]
    NotEnoughSubjects { subjects: usize, splits: usize },

    #[error("cannot place events: {0}")]
    InfeasibleDensity(String),

    #[error("instance too large for exhaustive matching: {gt} ground-truth x {pred} predicted")]
    InstanceTooLarge { gt: usize, pred: usize },

    #[error("mask of {mask} frames is not shorter than sequence of {frames}")]
    MaskTooLong { mask: usize, frames: usize },

    #[error("threshold sweep requested without validation data")]
    SweepWithoutValidation,

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("duplicate recording id {0}")]
    DuplicateId(String),

    #[error("unknown recording id {0}")]
    UnknownRecording(String),

    #[error("file {path} referenced by {id} does not exist")]
    MissingFile { id: String, path: PathBuf },

    #[error("stage {stage} failed for {record}: {source}")]
    Stage {
        stage: &'static str,
        record: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage and record it came from.
    pub fn in_stage(self, stage: &'static str, record: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            record: record.into(),
            source: Box::new(self),
        }
    }
}
