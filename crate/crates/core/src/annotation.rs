//! Annotator tracks, frame-wise majority merging and corpus statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataprep::SplitSpec;
use crate::error::{Error, Result};
use crate::labels::{decode_events, FrameLabelSeq, PauseType};
use crate::manifest::DatasetManifest;

/// Tie rule applied when several labels share the top vote count.
pub const TIE_RULE: &str = "BS>B>S>O";

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationTrack {
    pub recording_id: String,
    pub annotator_id: String,
    pub seq: FrameLabelSeq,
}

/// Track file: label JSON plus the annotator id.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackFile {
    pub rate_hz: u32,
    pub labels: Vec<i64>,
    pub annotator: String,
}

/// Merged output: label JSON plus how it was merged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedFile {
    pub rate_hz: u32,
    pub labels: Vec<i64>,
    pub merge: String,
    pub tie_rule: String,
}

impl AnnotationTrack {
    pub fn from_file(recording_id: &str, file: TrackFile) -> Result<Self> {
        let seq = FrameLabelSeq::try_from(crate::labels::LabelFile {
            rate_hz: file.rate_hz,
            labels: file.labels,
        })?;
        Ok(Self {
            recording_id: recording_id.to_string(),
            annotator_id: file.annotator,
            seq,
        })
    }

    pub fn from_json(recording_id: &str, s: &str) -> Result<Self> {
        Self::from_file(recording_id, serde_json::from_str(s)?)
    }

    pub fn load(recording_id: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(recording_id, &text)
    }

    pub fn to_file(&self) -> TrackFile {
        TrackFile {
            rate_hz: self.seq.rate_hz(),
            labels: self.seq.codes().into_iter().map(i64::from).collect(),
            annotator: self.annotator_id.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }
}

impl MergedFile {
    pub fn from_seq(seq: &FrameLabelSeq) -> Self {
        Self {
            rate_hz: seq.rate_hz(),
            labels: seq.codes().into_iter().map(i64::from).collect(),
            merge: "majority".into(),
            tie_rule: TIE_RULE.into(),
        }
    }
}

/// Per-frame modal label across annotators; ties go to the label ranked
/// higher in `BS > B > S > O`.
pub fn majority_vote(tracks: &[AnnotationTrack]) -> Result<FrameLabelSeq> {
    let seqs: Vec<&FrameLabelSeq> = tracks.iter().map(|t| &t.seq).collect();
    if let Some(w) = tracks.windows(2).find(|w| w[0].recording_id != w[1].recording_id) {
        return Err(Error::InvalidParameter(format!(
            "tracks from different recordings: {} and {}",
            w[0].recording_id, w[1].recording_id
        )));
    }
    majority_vote_seqs(&seqs)
}

pub fn majority_vote_seqs(seqs: &[&FrameLabelSeq]) -> Result<FrameLabelSeq> {
    if seqs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "majority vote needs at least 2 tracks, got {}",
            seqs.len()
        )));
    }
    let frames = seqs[0].len();
    let rate = seqs[0].rate_hz();
    for s in &seqs[1..] {
        if s.len() != frames {
            return Err(Error::LengthMismatch {
                what: "annotation track frames",
                left: frames,
                right: s.len(),
            });
        }
        if s.rate_hz() != rate {
            return Err(Error::InvalidParameter(format!(
                "track rates differ: {rate} vs {}",
                s.rate_hz()
            )));
        }
    }
    let merged = (0..frames)
        .map(|t| {
            let mut votes = [0usize; 4];
            for s in seqs {
                votes[s.labels()[t].index()] += 1;
            }
            vote_winner(&votes)
        })
        .collect();
    FrameLabelSeq::with_rate(merged, rate)
}

/// Highest count wins; among equal counts the higher code wins.
pub(crate) fn vote_winner(votes: &[usize; 4]) -> PauseType {
    let mut best = PauseType::O;
    for label in PauseType::ALL {
        if votes[label.index()] >= votes[best.index()] {
            best = label;
        }
    }
    best
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_s: f64,
    /// Counts per bin; bin `i` covers `[i*w, (i+1)*w)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    fn new(bin_width_s: f64) -> Self {
        Self {
            bin_width_s,
            counts: Vec::new(),
        }
    }

    fn add(&mut self, value_s: f64) {
        let bin = (value_s / self.bin_width_s + 1e-9).floor() as usize;
        if self.counts.len() <= bin {
            self.counts.resize(bin + 1, 0);
        }
        self.counts[bin] += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub recordings: usize,
    pub total_duration_s: f64,
    /// Count of recordings per exertion level 1..=5.
    pub exertion_histogram: BTreeMap<u8, usize>,
    pub event_counts: BTreeMap<PauseType, usize>,
    /// Summed event duration per type.
    pub event_duration_s: BTreeMap<PauseType, f64>,
    pub duration_histograms: BTreeMap<PauseType, Histogram>,
}

impl GroupStats {
    fn new(bin_width_s: f64) -> Self {
        Self {
            recordings: 0,
            total_duration_s: 0.0,
            exertion_histogram: (1..=5).map(|l| (l, 0)).collect(),
            event_counts: PauseType::PAUSES.iter().map(|&p| (p, 0)).collect(),
            event_duration_s: PauseType::PAUSES.iter().map(|&p| (p, 0.0)).collect(),
            duration_histograms: PauseType::PAUSES
                .iter()
                .map(|&p| (p, Histogram::new(bin_width_s)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Keyed by split name, or `"all"` without a split.
    pub groups: BTreeMap<String, GroupStats>,
    pub missing_labels: Vec<String>,
}

pub const DURATION_BIN_S: f64 = 0.1;

/// Exertion histogram plus per-type event counts and duration histograms,
/// grouped by split when one is given. Recordings without labels are listed
/// in `missing_labels` and otherwise skipped.
pub fn corpus_stats(
    manifest: &DatasetManifest,
    labels: &BTreeMap<String, FrameLabelSeq>,
    split: Option<&SplitSpec>,
) -> CorpusStats {
    let mut groups: BTreeMap<String, GroupStats> = BTreeMap::new();
    let mut missing = Vec::new();
    for rec in &manifest.records {
        let meta = &rec.meta;
        let group = match split {
            Some(s) => match s.split_of(meta) {
                Some(sp) => sp.name().to_string(),
                None => "unassigned".to_string(),
            },
            None => "all".to_string(),
        };
        let stats = groups
            .entry(group)
            .or_insert_with(|| GroupStats::new(DURATION_BIN_S));
        let Some(seq) = labels.get(&meta.id) else {
            missing.push(meta.id.clone());
            continue;
        };
        stats.recordings += 1;
        stats.total_duration_s += meta.duration_s;
        *stats.exertion_histogram.entry(meta.exertion_level).or_default() += 1;
        let rate = seq.rate_hz() as f64;
        for ev in decode_events(seq) {
            let dur = ev.len() as f64 / rate;
            *stats.event_counts.entry(ev.ptype).or_default() += 1;
            *stats.event_duration_s.entry(ev.ptype).or_default() += dur;
            stats
                .duration_histograms
                .get_mut(&ev.ptype)
                .expect("pause type present")
                .add(dur);
        }
    }
    if groups.is_empty() {
        groups.insert("all".into(), GroupStats::new(DURATION_BIN_S));
    }
    CorpusStats {
        groups,
        missing_labels: missing,
    }
}
