//! Exertion-level classification with a rank-consistent ordinal (CORAL) head.
//!
//! The head shares one weight vector across the `K-1` binary "level > k"
//! tasks and differs only in its biases. Biases are parameterized as
//! `b_k = b_1 - sum_{j<k} softplus(r_j)`, so they are non-increasing by
//! construction and the cumulative probabilities `p_k = sigmoid(w.x + b_k)`
//! are non-increasing in `k` for every input.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{bce_term, LossOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExertionBinary {
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExertionLabel {
    pub raw_level: u8,
    pub binary: ExertionBinary,
}

impl ExertionLabel {
    /// Ordinal class for a `K`-class head: 1..=2 for binary, the raw level for 5.
    pub fn class(&self, classes: usize) -> usize {
        if classes == 2 {
            match self.binary {
                ExertionBinary::Low => 1,
                ExertionBinary::High => 2,
            }
        } else {
            self.raw_level as usize
        }
    }
}

/// Levels 1-2 are `Low`, 3-5 are `High`.
pub fn cluster_exertion(raw: i64) -> Result<ExertionLabel> {
    let binary = match raw {
        1 | 2 => ExertionBinary::Low,
        3..=5 => ExertionBinary::High,
        other => return Err(Error::ExertionOutOfRange(other)),
    };
    Ok(ExertionLabel {
        raw_level: raw as u8,
        binary,
    })
}

/// Temporal mean of each column.
pub fn pool_features(x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("pooling input"));
    }
    Ok(x.mean_axis(Axis(0)).expect("non-empty"))
}

/// Ordinal target encoding: `t_k = 1` iff `class > k`, for `k = 1..K-1`.
pub fn ordinal_targets(class: usize, classes: usize) -> Result<Vec<f64>> {
    if !(1..=classes).contains(&class) {
        return Err(Error::InvalidParameter(format!(
            "class {class} outside 1..={classes}"
        )));
    }
    Ok((1..classes).map(|k| if class > k { 1.0 } else { 0.0 }).collect())
}

/// Mean over samples of the summed per-threshold binary cross-entropies.
pub fn coral_loss(
    probs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<LossOutput<ndarray::Ix2>> {
    if probs.shape() != targets.shape() {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {:?} vs targets {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    let n = probs.nrows();
    if n == 0 || probs.ncols() == 0 {
        return Err(Error::EmptyInput("ordinal loss input"));
    }
    for (i, row) in targets.outer_iter().enumerate() {
        if let Some(&bad) = row.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::NonBinaryTarget(bad));
        }
        if row.windows(2).into_iter().any(|w| w[1] > w[0]) {
            return Err(Error::NonMonotoneOrdinal { row: i });
        }
    }
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(probs.raw_dim());
    for ((g, &p), &t) in grad.iter_mut().zip(probs.iter()).zip(targets.iter()) {
        let (v, d) = bce_term(p, t);
        value += v;
        *g = d * scale;
    }
    Ok(LossOutput {
        value: value * scale,
        grad,
    })
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Biases from the first bias and the raw increments.
pub(crate) fn coral_biases(first: f64, raw_increments: &[f64]) -> Vec<f64> {
    let mut biases = Vec::with_capacity(raw_increments.len() + 1);
    let mut b = first;
    biases.push(b);
    for &r in raw_increments {
        b -= softplus(r);
        biases.push(b);
    }
    biases
}

/// Gradients of the head parameters given `d loss / d logit_k`.
///
/// Returns `(d_score, d_first_bias, d_raw_increments)` where `d_score` is the
/// gradient with respect to the shared score `w.x`.
pub(crate) fn coral_bias_backward(dlogits: &[f64], raw_increments: &[f64]) -> (f64, f64, Vec<f64>) {
    let d_score: f64 = dlogits.iter().sum();
    let d_first = d_score;
    // b_k depends on r_j for every j < k with slope -sigmoid(r_j)
    let d_raw = raw_increments
        .iter()
        .enumerate()
        .map(|(j, &r)| -sigmoid(r) * dlogits[j + 1..].iter().sum::<f64>())
        .collect();
    (d_score, d_first, d_raw)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoralHead {
    pub weights: Vec<f64>,
    pub first_bias: f64,
    pub raw_increments: Vec<f64>,
}

impl CoralHead {
    /// Zero weights; biases spaced one logit apart.
    pub fn new(dims: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "ordinal head needs at least 2 classes, got {classes}"
            )));
        }
        // softplus(0.5413) = 1
        Ok(Self {
            weights: vec![0.0; dims],
            first_bias: (classes as f64 - 2.0) / 2.0,
            raw_increments: vec![0.541_324_854_612_918; classes - 2],
        })
    }

    pub fn classes(&self) -> usize {
        self.raw_increments.len() + 2
    }

    pub fn biases(&self) -> Vec<f64> {
        coral_biases(self.first_bias, &self.raw_increments)
    }

    /// Thresholds `-b_k`, non-decreasing in `k`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.biases().into_iter().map(|b| -b).collect()
    }

    pub fn logits(&self, pooled: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        if pooled.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "pooled dims {} vs head dims {}",
                pooled.len(),
                self.weights.len()
            )));
        }
        let score: f64 = self.weights.iter().zip(pooled.iter()).map(|(w, x)| w * x).sum();
        Ok(self.biases().into_iter().map(|b| score + b).collect())
    }

    pub fn probabilities(&self, pooled: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.logits(pooled)?.into_iter().map(sigmoid).collect())
    }

    /// Gradient of a loss with respect to the head parameters, given
    /// `d loss / d p_k` for one input.
    pub fn backward(&self, pooled: ArrayView1<'_, f64>, dprobs: &[f64]) -> Result<CoralHead> {
        let probs = self.probabilities(pooled)?;
        let dlogits: Vec<f64> = probs
            .iter()
            .zip(dprobs)
            .map(|(p, d)| d * p * (1.0 - p))
            .collect();
        let (d_score, d_first, d_raw) = coral_bias_backward(&dlogits, &self.raw_increments);
        Ok(CoralHead {
            weights: pooled.iter().map(|x| d_score * x).collect(),
            first_bias: d_first,
            raw_increments: d_raw,
        })
    }
}

/// `1 + #{k : p_k > 0.5}`.
pub fn class_from_probabilities(probs: &[f64]) -> usize {
    1 + probs.iter().filter(|&&p| p > 0.5).count()
}

pub fn coral_predict(head: &CoralHead, pooled: ArrayView1<'_, f64>) -> Result<usize> {
    Ok(class_from_probabilities(&head.probabilities(pooled)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoralFitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for CoralFitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

/// Full-batch Adam fit of a head on pooled features; used for the pooled
/// feature baseline (no recurrent backbone).
pub fn fit_coral_head(
    pooled: &[Array1<f64>],
    classes_of: &[usize],
    classes: usize,
    cfg: &CoralFitConfig,
) -> Result<CoralHead> {
    if pooled.is_empty() || pooled.len() != classes_of.len() {
        return Err(Error::InvalidParameter(format!(
            "{} feature rows for {} labels",
            pooled.len(),
            classes_of.len()
        )));
    }
    let dims = pooled[0].len();
    let mut head = CoralHead::new(dims, classes)?;
    let targets: Vec<Vec<f64>> = classes_of
        .iter()
        .map(|&c| ordinal_targets(c, classes))
        .collect::<Result<_>>()?;
    let n_params = dims + 1 + (classes - 2);
    let mut adam = crate::models::Adam::new(n_params, cfg.learning_rate);
    let n = pooled.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grad = vec![0.0; n_params];
        for (x, t) in pooled.iter().zip(&targets) {
            let probs = head.probabilities(x.view())?;
            let dprobs: Vec<f64> = probs.iter().zip(t).map(|(&p, &t)| bce_term(p, t).1 / n).collect();
            let g = head.backward(x.view(), &dprobs)?;
            for (acc, v) in grad.iter_mut().zip(flatten(&g)) {
                *acc += v;
            }
        }
        for (g, w) in grad.iter_mut().zip(&head.weights) {
            *g += cfg.l2 * w;
        }
        let mut flat = flatten(&head);
        adam.step(&mut flat, &grad);
        head = unflatten(&flat, dims, classes);
    }
    Ok(head)
}

fn flatten(h: &CoralHead) -> Vec<f64> {
    let mut v = h.weights.clone();
    v.push(h.first_bias);
    v.extend_from_slice(&h.raw_increments);
    v
}

fn unflatten(v: &[f64], dims: usize, classes: usize) -> CoralHead {
    CoralHead {
        weights: v[..dims].to_vec(),
        first_bias: v[dims],
        raw_increments: v[dims + 1..dims + 1 + classes - 2].to_vec(),
    }
}
