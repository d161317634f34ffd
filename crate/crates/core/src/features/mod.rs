//! Audio front end and frame-aligned feature matrices.

mod audio;
mod matrix;
mod mel;

pub use audio::{normalize_audio, resample, AudioClip, Normalized};
pub use matrix::{
    fuse, read_matrix, resample_embedding, sidecar_path, write_matrix, FeatureKind,
    FeatureMatrix, MatrixHeader,
};
pub use mel::{
    compute_mfb, compute_mfcc, dct_ii, dct_ii_vec, hz_to_mel, mel_to_hz, MelConfig, MelExtractor,
};
