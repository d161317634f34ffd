//! Synthetic labelled corpora with controllable class separation.
//!
//! Feature layout for the 40-column acoustic stand-in (noise std `noise`,
//! separation `margin * noise`):
//!
//! - column 0: shifted for every pause frame (pause vs. speech),
//! - columns 1..=3: shifted for `S`, `B`, `BS` frames respectively,
//! - column 4: shifted by `(exertion_level - 3) * exertion_gain * noise`,
//! - remaining columns: pure noise.
//!
//! The 768-column embedding stand-in repeats the class columns with its own
//! noise draw.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AudioClip, FeatureKind, FeatureMatrix};
use crate::labels::{encode_labels, FrameLabelSeq, PauseEvent, PauseType};
use crate::manifest::{DatasetManifest, ManifestRecord, RecordingMeta, SpeechTask};
use crate::protocol::{EMBEDDING_DIMS, FRAME_RATE_HZ, HOP_SAMPLES, N_MEL_BANDS, SAMPLE_RATE_HZ};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    /// Expected events per minute for `S`, `B`, `BS`.
    pub events_per_min: [f64; 3],
    /// Duration range in seconds for `S`, `B`, `BS`.
    pub duration_range_s: [(f64, f64); 3],
    /// Minimum run of `O` frames between consecutive events.
    pub min_gap_frames: usize,
    pub noise: f64,
    pub margin: f64,
    pub exertion_gain: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 1000,
            events_per_min: [12.0, 8.0, 6.0],
            duration_range_s: [(0.2, 0.8), (0.2, 0.6), (0.5, 2.0)],
            min_gap_frames: 25,
            noise: 1.0,
            margin: 10.0,
            exertion_gain: 1.0,
        }
    }
}

impl SynthConfig {
    fn duration_frames(&self, ptype: PauseType) -> (usize, usize) {
        let (lo, hi) = self.duration_range_s[ptype.index() - 1];
        let rate = FRAME_RATE_HZ as f64;
        let lo = ((lo * rate).ceil() as usize).max(1);
        let hi = ((hi * rate).floor() as usize).max(lo);
        (lo, hi)
    }

    fn validate(&self) -> Result<()> {
        if self.frames < 50 {
            return Err(Error::InvalidParameter(format!(
                "synthetic recordings need at least 50 frames, got {}",
                self.frames
            )));
        }
        if self.events_per_min.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidParameter("event densities must be >= 0".into()));
        }
        if !(self.noise >= 0.0) || !(self.margin >= 0.0) {
            return Err(Error::InvalidParameter("noise and margin must be >= 0".into()));
        }
        for (lo, hi) in self.duration_range_s {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::InvalidParameter(format!("duration range {lo}..{hi}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecording {
    pub meta: RecordingMeta,
    pub labels: FrameLabelSeq,
    pub acoustic: FeatureMatrix,
}

/// Derives an independent per-item seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples non-overlapping events for one recording.
pub fn synth_events(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Vec<PauseEvent>> {
    cfg.validate()?;
    let minutes = cfg.frames as f64 / (FRAME_RATE_HZ as f64 * 60.0);
    let mut types = Vec::new();
    for ptype in PauseType::PAUSES {
        let n = (cfg.events_per_min[ptype.index() - 1] * minutes).round() as usize;
        types.extend(std::iter::repeat_n(ptype, n));
    }
    let worst: usize = types.iter().map(|&t| cfg.duration_frames(t).1).sum::<usize>()
        + (types.len() + 1) * cfg.min_gap_frames;
    if worst > cfg.frames {
        return Err(Error::InfeasibleDensity(format!(
            "{} events need up to {worst} frames, recording has {}",
            types.len(),
            cfg.frames
        )));
    }
    if types.is_empty() {
        return Ok(Vec::new());
    }
    // Fisher-Yates so the type order is random
    for i in (1..types.len()).rev() {
        let j = rng.random_range(0..=i);
        types.swap(i, j);
    }
    let durations: Vec<usize> = types
        .iter()
        .map(|&t| {
            let (lo, hi) = cfg.duration_frames(t);
            rng.random_range(lo..=hi)
        })
        .collect();
    let used: usize = durations.iter().sum::<usize>() + (types.len() + 1) * cfg.min_gap_frames;
    let slack = cfg.frames - used;
    let weights: Vec<f64> = (0..=types.len()).map(|_| rng.random::<f64>() + 1e-3).collect();
    let wsum: f64 = weights.iter().sum();
    let mut extra: Vec<usize> = weights
        .iter()
        .map(|w| (w / wsum * slack as f64).floor() as usize)
        .collect();
    let leftover = slack - extra.iter().sum::<usize>();
    extra[types.len()] += leftover;

    let mut events = Vec::with_capacity(types.len());
    let mut t = 0;
    for (i, (&ptype, &dur)) in types.iter().zip(&durations).enumerate() {
        t += cfg.min_gap_frames + extra[i];
        events.push(PauseEvent::new(t, t + dur, ptype));
        t += dur;
    }
    Ok(events)
}

fn class_features(
    labels: &FrameLabelSeq,
    dims: usize,
    cfg: &SynthConfig,
    exertion_level: u8,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let shift = cfg.margin * cfg.noise;
    let exertion_shift = (exertion_level as f64 - 3.0) * cfg.exertion_gain * cfg.noise;
    let mut x = Array2::zeros((labels.len(), dims));
    for (t, mut row) in x.outer_iter_mut().enumerate() {
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = cfg.noise * z;
        }
        let label = labels.labels()[t];
        if label.is_pause() {
            row[0] += shift;
            row[label.index()] += shift;
        }
        row[4] += exertion_shift;
    }
    x
}

/// One synthetic recording: events, labels and a 40-column acoustic matrix.
pub fn synth_generate(
    cfg: &SynthConfig,
    id: &str,
    subject_id: &str,
    seed: u64,
) -> Result<SynthRecording> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = synth_events(cfg, &mut rng)?;
    let labels = encode_labels(&events, cfg.frames)?;
    let exertion_level = rng.random_range(1..=5u8);
    let task = if rng.random::<bool>() {
        SpeechTask::Spontaneous
    } else {
        SpeechTask::Reading
    };
    let data = class_features(&labels, N_MEL_BANDS, cfg, exertion_level, &mut rng);
    let meta = RecordingMeta {
        id: id.to_string(),
        subject_id: subject_id.to_string(),
        duration_s: cfg.frames as f64 / FRAME_RATE_HZ as f64,
        exertion_level,
        task,
    };
    Ok(SynthRecording {
        meta,
        labels,
        acoustic: FeatureMatrix::new(data, FeatureKind::Mfb)?,
    })
}

/// 768-column embedding stand-in aligned with `labels`.
pub fn synth_embedding(
    labels: &FrameLabelSeq,
    cfg: &SynthConfig,
    exertion_level: u8,
    kind: FeatureKind,
    seed: u64,
) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = class_features(labels, EMBEDDING_DIMS, cfg, exertion_level, &mut rng);
    FeatureMatrix::new(data, kind)
}

/// Noise-excited audio whose loudness follows the labels: speech frames loud,
/// pauses quiet. Useful for exercising the audio front end end to end.
pub fn synth_audio(labels: &FrameLabelSeq, seed: u64) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(labels.len() * HOP_SAMPLES);
    for &label in labels.labels() {
        let amp = match label {
            PauseType::O => 0.3,
            PauseType::S => 0.002,
            PauseType::B => 0.05,
            PauseType::BS => 0.02,
        };
        for _ in 0..HOP_SAMPLES {
            let z: f64 = StandardNormal.sample(&mut rng);
            samples.push((amp * z).clamp(-0.99, 0.99));
        }
    }
    AudioClip::new(samples, SAMPLE_RATE_HZ)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_recordings: usize,
    pub n_subjects: usize,
    /// Recording length range in frames.
    pub frames_range: (usize, usize),
    pub synth: SynthConfig,
    /// Embedding kinds to generate alongside the acoustic features.
    pub embeddings: Vec<FeatureKind>,
    pub with_audio: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_recordings: 60,
            n_subjects: 20,
            frames_range: (1000, 1250),
            synth: SynthConfig::default(),
            embeddings: Vec::new(),
            with_audio: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub recordings: Vec<SynthRecording>,
    pub embeddings: Vec<Vec<FeatureMatrix>>,
    pub audio: Vec<Option<AudioClip>>,
    pub config: CorpusConfig,
    pub seed: u64,
}

/// Generates a corpus; recording `i` uses seed `derive_seed(seed, i)`.
pub fn synth_corpus(cfg: &CorpusConfig, seed: u64) -> Result<SynthCorpus> {
    if cfg.n_subjects == 0 || cfg.n_recordings == 0 {
        return Err(Error::InvalidParameter("empty synthetic corpus".into()));
    }
    let (lo, hi) = cfg.frames_range;
    if lo > hi {
        return Err(Error::InvalidParameter(format!("frames range {lo}..{hi}")));
    }
    let mut recordings = Vec::with_capacity(cfg.n_recordings);
    let mut embeddings = Vec::with_capacity(cfg.n_recordings);
    let mut audio = Vec::with_capacity(cfg.n_recordings);
    for i in 0..cfg.n_recordings {
        let rec_seed = derive_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(rec_seed);
        let frames = rng.random_range(lo..=hi);
        let rcfg = SynthConfig {
            frames,
            ..cfg.synth.clone()
        };
        let id = format!("rec{i:03}");
        let subject = format!("subj{:02}", i % cfg.n_subjects);
        let rec = synth_generate(&rcfg, &id, &subject, derive_seed(rec_seed, 0))?;
        let embs = cfg
            .embeddings
            .iter()
            .enumerate()
            .map(|(k, &kind)| {
                synth_embedding(
                    &rec.labels,
                    &rcfg,
                    rec.meta.exertion_level,
                    kind,
                    derive_seed(rec_seed, 1 + k as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let clip = if cfg.with_audio {
            Some(synth_audio(&rec.labels, derive_seed(rec_seed, 100))?)
        } else {
            None
        };
        recordings.push(rec);
        embeddings.push(embs);
        audio.push(clip);
    }
    Ok(SynthCorpus {
        recordings,
        embeddings,
        audio,
        config: cfg.clone(),
        seed,
    })
}

impl SynthCorpus {
    /// Writes labels, matrices, optional audio and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        for sub in ["labels", "features", "audio"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut records = Vec::with_capacity(self.recordings.len());
        for (i, rec) in self.recordings.iter().enumerate() {
            let id = &rec.meta.id;
            let mut entry = ManifestRecord::new(rec.meta.clone());
            let labels_rel = Path::new("labels").join(format!("{id}.json"));
            rec.labels.save(&dir.join(&labels_rel))?;
            entry.labels = Some(labels_rel);

            let mfb_rel = Path::new("features").join(format!("{id}.mfb.f32"));
            rec.acoustic.save(&dir.join(&mfb_rel))?;
            entry.features.insert("mfb".into(), mfb_rel);
            for emb in &self.embeddings[i] {
                let rel = Path::new("features").join(format!("{id}.{}.f32", emb.kind()));
                emb.save(&dir.join(&rel))?;
                entry.features.insert(emb.kind().name().into(), rel);
            }
            if let Some(clip) = &self.audio[i] {
                let rel = Path::new("audio").join(format!("{id}.wav"));
                clip.write_wav(&dir.join(&rel))?;
                entry.audio = Some(rel);
            }
            records.push(entry);
        }
        let manifest = DatasetManifest::new(records, dir)?;
        manifest.save(&dir.join("manifest.json"))?;
        let cfg_path = dir.join("synth_config.json");
        let cfg = serde_json::json!({ "seed": self.seed, "config": self.config });
        std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?)
            .map_err(|e| Error::io(&cfg_path, e))?;
        Ok(manifest)
    }
}
