//! Windowing, subject-disjoint splits and synthetic corpora.

mod split;
mod synth;
mod windows;

pub use split::{split_by_subject, Split, SplitSpec, BALANCE_TOLERANCE};
pub use synth::{
    derive_seed, synth_audio, synth_corpus, synth_embedding, synth_events, synth_generate,
    CorpusConfig, SynthConfig, SynthCorpus, SynthRecording,
};
pub use windows::{segment_windows, Window};
