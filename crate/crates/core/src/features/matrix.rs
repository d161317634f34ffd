use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{EMBEDDING_DIMS, FRAME_RATE_HZ, FUSED_DIMS, N_MEL_BANDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfb,
    Mfcc,
    Emb4,
    Emb6,
    Emb12,
    Fused,
}

impl FeatureKind {
    pub fn dims(self) -> usize {
        match self {
            FeatureKind::Mfb | FeatureKind::Mfcc => N_MEL_BANDS,
            FeatureKind::Emb4 | FeatureKind::Emb6 | FeatureKind::Emb12 => EMBEDDING_DIMS,
            FeatureKind::Fused => FUSED_DIMS,
        }
    }

    pub fn is_acoustic(self) -> bool {
        matches!(self, FeatureKind::Mfb | FeatureKind::Mfcc)
    }

    pub fn is_embedding(self) -> bool {
        matches!(self, FeatureKind::Emb4 | FeatureKind::Emb6 | FeatureKind::Emb12)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfb => "mfb",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Emb4 => "emb4",
            FeatureKind::Emb6 => "emb6",
            FeatureKind::Emb12 => "emb12",
            FeatureKind::Fused => "fused",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfb" => Ok(FeatureKind::Mfb),
            "mfcc" => Ok(FeatureKind::Mfcc),
            "emb4" | "4" => Ok(FeatureKind::Emb4),
            "emb6" | "6" => Ok(FeatureKind::Emb6),
            "emb12" | "12" => Ok(FeatureKind::Emb12),
            "fused" => Ok(FeatureKind::Fused),
            other => Err(Error::Config(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// Frame-aligned `T x F` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    kind: FeatureKind,
    rate_hz: u32,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, kind: FeatureKind) -> Result<Self> {
        Self::with_rate(data, kind, FRAME_RATE_HZ)
    }

    pub fn with_rate(data: Array2<f64>, kind: FeatureKind, rate_hz: u32) -> Result<Self> {
        if data.ncols() != kind.dims() {
            return Err(Error::ShapeMismatch(format!(
                "{kind} features need {} columns, got {}",
                kind.dims(),
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("feature matrix"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite {kind} entry")));
        }
        Ok(Self {
            data,
            kind,
            rate_hz,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }

    /// Rows `start..end` as a new matrix of the same kind.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames() {
            return Err(Error::InvalidParameter(format!(
                "frames {start}..{end} of matrix with {} rows",
                self.frames()
            )));
        }
        Ok(Self {
            data: self.data.slice(s![start..end, ..]).to_owned(),
            kind: self.kind,
            rate_hz: self.rate_hz,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_matrix(path, self.data.view(), self.kind, self.rate_hz)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (data, header) = read_matrix(path)?;
        Self::with_rate(data, header.kind, header.rate_hz)
    }
}

/// Linearly interpolates an embedding along time to `target_frames` rows.
///
/// First and last rows are kept exactly; identity when the row count already matches.
pub fn resample_embedding(emb: &FeatureMatrix, target_frames: usize) -> Result<FeatureMatrix> {
    if !emb.kind.is_embedding() {
        return Err(Error::InvalidParameter(format!(
            "resampling expects an embedding, got {}",
            emb.kind
        )));
    }
    if target_frames < 2 {
        return Err(Error::InvalidParameter(format!(
            "target length {target_frames} < 2"
        )));
    }
    let data = interpolate_rows(emb.data.view(), target_frames)?;
    FeatureMatrix::with_rate(data, emb.kind, FRAME_RATE_HZ)
}

pub(crate) fn interpolate_rows(src: ArrayView2<'_, f64>, target: usize) -> Result<Array2<f64>> {
    let n = src.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 rows to interpolate, got {n}"
        )));
    }
    if n == target {
        return Ok(src.to_owned());
    }
    let mut out = Array2::zeros((target, src.ncols()));
    let scale = (n - 1) as f64 / (target - 1) as f64;
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        if i == target - 1 {
            row.assign(&src.row(n - 1));
            continue;
        }
        let pos = i as f64 * scale;
        let lo = (pos.floor() as usize).min(n - 2);
        let frac = pos - lo as f64;
        let a = src.row(lo);
        let b = src.row(lo + 1);
        for ((o, &x), &y) in row.iter_mut().zip(a.iter()).zip(b.iter()) {
            *o = x + (y - x) * frac;
        }
    }
    Ok(out)
}

/// Concatenates acoustic (40) and embedding (768) columns into a fused 808-column matrix.
pub fn fuse(acoustic: &FeatureMatrix, emb: &FeatureMatrix) -> Result<FeatureMatrix> {
    if !acoustic.kind.is_acoustic() {
        return Err(Error::InvalidParameter(format!(
            "fuse expects acoustic features first, got {}",
            acoustic.kind
        )));
    }
    if !emb.kind.is_embedding() {
        return Err(Error::InvalidParameter(format!(
            "fuse expects an embedding second, got {}",
            emb.kind
        )));
    }
    if acoustic.frames() != emb.frames() {
        return Err(Error::LengthMismatch {
            what: "acoustic vs embedding frames",
            left: acoustic.frames(),
            right: emb.frames(),
        });
    }
    let data = concatenate(Axis(1), &[acoustic.view(), emb.view()])
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    FeatureMatrix::with_rate(data, FeatureKind::Fused, acoustic.rate_hz)
}

/// JSON sidecar describing a raw matrix blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub frames: usize,
    pub dims: usize,
    pub rate_hz: u32,
    pub kind: FeatureKind,
}

/// Sidecar path for a matrix blob: the blob path with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes little-endian f32 row-major data plus its JSON sidecar.
pub fn write_matrix(
    path: &Path,
    data: ArrayView2<'_, f64>,
    kind: FeatureKind,
    rate_hz: u32,
) -> Result<()> {
    let header = MatrixHeader {
        frames: data.nrows(),
        dims: data.ncols(),
        rate_hz,
        kind,
    };
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for row in data.outer_iter() {
        for &v in row.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string(&header)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(Array2<f64>, MatrixHeader)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: MatrixHeader = serde_json::from_str(&text)?;
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let expected = header.frames * header.dims * 4;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes, header says {}x{} ({} bytes)",
            path.display(),
            bytes.len(),
            header.frames,
            header.dims,
            expected
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array2::from_shape_vec((header.frames, header.dims), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((data, header))
}
