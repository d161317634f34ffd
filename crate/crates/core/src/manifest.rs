//! Corpus index: one JSON document listing every recording and its files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable that overrides the directory relative paths resolve against.
pub const DATA_ROOT_ENV: &str = "PAUSEBENCH_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeechTask {
    Reading,
    Spontaneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub id: String,
    pub subject_id: String,
    pub duration_s: f64,
    pub exertion_level: u8,
    pub task: SpeechTask,
}

impl RecordingMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "recording {} has duration {}",
                self.id, self.duration_s
            )));
        }
        if !(1..=5).contains(&self.exertion_level) {
            return Err(Error::ExertionOutOfRange(self.exertion_level as i64));
        }
        Ok(())
    }

    /// Frame count at the given rate, `round(duration * rate)`.
    pub fn frames(&self, rate_hz: u32) -> usize {
        (self.duration_s * rate_hz as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(flatten)]
    pub meta: RecordingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Feature and embedding matrix files keyed by kind name (`mfb`, `emb4`, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub features: BTreeMap<String, PathBuf>,
}

impl ManifestRecord {
    pub fn new(meta: RecordingMeta) -> Self {
        Self {
            meta,
            audio: None,
            labels: None,
            features: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let manifest = Self {
            records,
            root: root.into(),
        };
        manifest.validate_records()?;
        Ok(manifest)
    }

    fn validate_records(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            rec.meta.validate()?;
            if !seen.insert(rec.meta.id.as_str()) {
                return Err(Error::DuplicateId(rec.meta.id.clone()));
            }
        }
        Ok(())
    }

    /// Loads and validates a manifest; every referenced file must exist.
    ///
    /// Relative paths resolve against `$PAUSEBENCH_DATA` when set, else the
    /// manifest's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.root = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        manifest.validate_records()?;
        manifest.check_files()?;
        Ok(manifest)
    }

    pub fn check_files(&self) -> Result<()> {
        for rec in &self.records {
            let paths = rec
                .audio
                .iter()
                .chain(rec.labels.iter())
                .chain(rec.features.values());
            for p in paths {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(Error::MissingFile {
                        id: rec.meta.id.clone(),
                        path: full,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn get(&self, id: &str) -> Result<&ManifestRecord> {
        self.records
            .iter()
            .find(|r| r.meta.id == id)
            .ok_or_else(|| Error::UnknownRecording(id.to_string()))
    }

    pub fn metas(&self) -> impl Iterator<Item = &RecordingMeta> {
        self.records.iter().map(|r| &r.meta)
    }
}
