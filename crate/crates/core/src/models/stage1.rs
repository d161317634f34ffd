//! Stage-1 pause detector and soft re-weighting of fused features.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::network::{HeadKind, SeqModel};
use crate::error::{Error, Result};
use crate::features::{fuse, FeatureMatrix};

/// Frame-wise pause probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Output {
    omega: Vec<f64>,
}

impl Stage1Output {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if let Some(bad) = omega.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidParameter(format!(
                "pause probability {bad} outside [0, 1]"
            )));
        }
        Ok(Self { omega })
    }

    /// Constant weights, e.g. the identity stub `omega = 1`.
    pub fn constant(value: f64, frames: usize) -> Result<Self> {
        Self::new(vec![value; frames])
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Runs a binary-head detector over acoustic features.
pub fn stage1_detect(detector: &SeqModel, acoustic: &FeatureMatrix) -> Result<Stage1Output> {
    if detector.config().head != HeadKind::Binary {
        return Err(Error::Config(format!(
            "stage-1 detector needs a binary head, got {:?}",
            detector.config().head
        )));
    }
    let y = detector.forward(acoustic.view())?;
    Stage1Output::new(y.column(0).to_vec())
}

/// `omega_t * [A_t; E_t]` for every frame.
pub fn reweight(omega: &Stage1Output, acoustic: &FeatureMatrix, emb: &FeatureMatrix) -> Result<FeatureMatrix> {
    if omega.len() != acoustic.frames() {
        return Err(Error::LengthMismatch {
            what: "pause probabilities vs feature frames",
            left: omega.len(),
            right: acoustic.frames(),
        });
    }
    let fused = fuse(acoustic, emb)?;
    let (kind, rate) = (fused.kind(), fused.rate_hz());
    let mut data = fused.into_data();
    for (mut row, &w) in data.axis_iter_mut(Axis(0)).zip(&omega.omega) {
        row.mapv_inplace(|v| w * v);
    }
    FeatureMatrix::with_rate(data, kind, rate)
}
