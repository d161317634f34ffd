//! Pause label codec: per-frame label sequences and the events they encode.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::protocol::FRAME_RATE_HZ;

/// Frame label. The numeric code doubles as the regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum PauseType {
    /// No pause.
    #[default]
    O = 0,
    /// Semantic pause.
    S = 1,
    /// Breathing pause.
    B = 2,
    /// Combined breathing and semantic pause.
    BS = 3,
}

impl PauseType {
    pub const ALL: [PauseType; 4] = [PauseType::O, PauseType::S, PauseType::B, PauseType::BS];
    pub const PAUSES: [PauseType; 3] = [PauseType::S, PauseType::B, PauseType::BS];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Result<Self> {
        match code {
            0 => Ok(PauseType::O),
            1 => Ok(PauseType::S),
            2 => Ok(PauseType::B),
            3 => Ok(PauseType::BS),
            other => Err(Error::InvalidLabel(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PauseType::O => "O",
            PauseType::S => "S",
            PauseType::B => "B",
            PauseType::BS => "BS",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "O" => Ok(PauseType::O),
            "S" => Ok(PauseType::S),
            "B" => Ok(PauseType::B),
            "BS" => Ok(PauseType::BS),
            other => Err(Error::InvalidPauseTypeName(other.to_string())),
        }
    }

    pub fn is_pause(self) -> bool {
        self != PauseType::O
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PauseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for PauseType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for PauseType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        PauseType::from_name(&name).map_err(serde::de::Error::custom)
    }
}

/// One contiguous pause: frames `onset..offset` (offset exclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PauseEvent {
    pub onset: usize,
    pub offset: usize,
    pub ptype: PauseType,
}

impl PauseEvent {
    pub fn new(onset: usize, offset: usize, ptype: PauseType) -> Self {
        debug_assert!(onset < offset, "empty event {onset}..{offset}");
        debug_assert!(ptype.is_pause());
        Self {
            onset,
            offset,
            ptype,
        }
    }

    pub fn len(&self) -> usize {
        self.offset - self.onset
    }

    pub fn is_empty(&self) -> bool {
        self.offset <= self.onset
    }

    /// Number of frames shared with `other`.
    pub fn overlap(&self, other: &PauseEvent) -> usize {
        let lo = self.onset.max(other.onset);
        let hi = self.offset.min(other.offset);
        hi.saturating_sub(lo)
    }
}

/// Per-frame pause labels at a fixed frame rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameLabelSeq {
    labels: Vec<PauseType>,
    rate_hz: u32,
}

impl FrameLabelSeq {
    pub fn new(labels: Vec<PauseType>) -> Result<Self> {
        Self::with_rate(labels, FRAME_RATE_HZ)
    }

    pub fn with_rate(labels: Vec<PauseType>, rate_hz: u32) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("label sequence"));
        }
        if rate_hz == 0 {
            return Err(Error::InvalidParameter("frame rate must be positive".into()));
        }
        Ok(Self { labels, rate_hz })
    }

    pub fn from_codes(codes: &[i64]) -> Result<Self> {
        let labels = codes
            .iter()
            .map(|&c| PauseType::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    pub fn zeros(frames: usize) -> Result<Self> {
        Self::new(vec![PauseType::O; frames])
    }

    pub fn labels(&self) -> &[PauseType] {
        &self.labels
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.code()).collect()
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_labels(self) -> Vec<PauseType> {
        self.labels
    }

    /// Frames `start..end` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.labels.len() {
            return Err(Error::InvalidParameter(format!(
                "slice {start}..{end} of sequence with {} frames",
                self.labels.len()
            )));
        }
        Self::with_rate(self.labels[start..end].to_vec(), self.rate_hz)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&LabelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: LabelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// On-disk label file: `{"rate_hz":50,"labels":[...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelFile {
    pub rate_hz: u32,
    pub labels: Vec<i64>,
}

impl From<&FrameLabelSeq> for LabelFile {
    fn from(seq: &FrameLabelSeq) -> Self {
        Self {
            rate_hz: seq.rate_hz,
            labels: seq.labels.iter().map(|l| l.code() as i64).collect(),
        }
    }
}

impl TryFrom<LabelFile> for FrameLabelSeq {
    type Error = Error;

    fn try_from(file: LabelFile) -> Result<Self> {
        let labels = file
            .labels
            .iter()
            .map(|&c| PauseType::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        FrameLabelSeq::with_rate(labels, file.rate_hz)
    }
}

/// Rasterizes events into a label sequence of `frames` frames.
///
/// Events may be given in any order but must not overlap; touching events
/// (`a.offset == b.onset`) are fine.
pub fn encode_labels(events: &[PauseEvent], frames: usize) -> Result<FrameLabelSeq> {
    if frames == 0 {
        return Err(Error::EmptyInput("frame count"));
    }
    let mut sorted: Vec<PauseEvent> = events.to_vec();
    sorted.sort();
    for ev in &sorted {
        if ev.onset >= ev.offset || ev.offset > frames || !ev.ptype.is_pause() {
            return Err(Error::EventOutOfBounds { event: *ev, frames });
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].onset < pair[0].offset {
            return Err(Error::OverlappingEvents {
                first: pair[0],
                second: pair[1],
            });
        }
    }
    let mut labels = vec![PauseType::O; frames];
    for ev in &sorted {
        labels[ev.onset..ev.offset].fill(ev.ptype);
    }
    FrameLabelSeq::new(labels)
}

/// Maximal runs of one non-O label, in onset order.
pub fn decode_events(seq: &FrameLabelSeq) -> Vec<PauseEvent> {
    events_from_labels(seq.labels())
}

pub(crate) fn events_from_labels(labels: &[PauseType]) -> Vec<PauseEvent> {
    let mut events = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        let label = labels[t];
        let start = t;
        while t < labels.len() && labels[t] == label {
            t += 1;
        }
        if label.is_pause() {
            events.push(PauseEvent::new(start, t, label));
        }
    }
    events
}

/// Event file entry: times in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub onset_s: f64,
    pub offset_s: f64,
    #[serde(rename = "type")]
    pub ptype: PauseType,
}

impl TimedEvent {
    pub fn from_event(ev: &PauseEvent, rate_hz: u32) -> Self {
        Self {
            onset_s: ev.onset as f64 / rate_hz as f64,
            offset_s: ev.offset as f64 / rate_hz as f64,
            ptype: ev.ptype,
        }
    }

    /// Converts to frame indices by rounding to the nearest frame boundary.
    pub fn to_event(&self, rate_hz: u32) -> Result<PauseEvent> {
        if !self.ptype.is_pause() {
            return Err(Error::InvalidPauseTypeName("O".into()));
        }
        if !(self.onset_s >= 0.0) || !(self.offset_s > self.onset_s) {
            return Err(Error::InvalidParameter(format!(
                "event times {}..{}",
                self.onset_s, self.offset_s
            )));
        }
        let onset = (self.onset_s * rate_hz as f64).round() as usize;
        let offset = ((self.offset_s * rate_hz as f64).round() as usize).max(onset + 1);
        Ok(PauseEvent::new(onset, offset, self.ptype))
    }
}

pub fn events_to_json(events: &[PauseEvent], rate_hz: u32) -> Result<String> {
    let timed: Vec<TimedEvent> = events
        .iter()
        .map(|e| TimedEvent::from_event(e, rate_hz))
        .collect();
    Ok(serde_json::to_string(&timed)?)
}

pub fn events_from_json(s: &str, rate_hz: u32) -> Result<Vec<PauseEvent>> {
    let timed: Vec<TimedEvent> = serde_json::from_str(s)?;
    timed.iter().map(|t| t.to_event(rate_hz)).collect()
}
