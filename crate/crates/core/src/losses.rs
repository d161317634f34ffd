//! Frame-wise training objectives. Every loss returns its mean value over
//! all `N x T` frames together with the analytic gradient with respect to
//! the prediction.

use std::collections::BTreeMap;

use ndarray::{Array, Array2, Array3, ArrayView2, ArrayView3, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::PauseType;

/// Probability clamp for the cross-entropy style losses.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<D: Dimension> {
    pub value: f64,
    pub grad: Array<f64, D>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub BTreeMap<PauseType, f64>);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self(PauseType::ALL.iter().map(|&p| (p, 1.0)).collect())
    }

    /// Inverse class frequency, rescaled so the four weights average to 1.
    /// Classes that never occur get the largest observed weight.
    pub fn inverse_frequency<'a>(labels: impl IntoIterator<Item = &'a PauseType>) -> Self {
        let mut counts = [0usize; 4];
        for l in labels {
            counts[l.index()] += 1;
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Self::uniform();
        }
        let raw: Vec<Option<f64>> = counts
            .iter()
            .map(|&c| (c > 0).then(|| total as f64 / (4.0 * c as f64)))
            .collect();
        let fill = raw.iter().flatten().cloned().fold(0.0, f64::max);
        let raw: Vec<f64> = raw.into_iter().map(|w| w.unwrap_or(fill)).collect();
        let mean = raw.iter().sum::<f64>() / 4.0;
        Self(
            PauseType::ALL
                .iter()
                .zip(raw)
                .map(|(&p, w)| (p, w / mean))
                .collect(),
        )
    }

    pub fn get(&self, ptype: PauseType) -> Result<f64> {
        self.0
            .get(&ptype)
            .copied()
            .ok_or(Error::MissingClassWeight(ptype))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DafParams {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub class_weights: ClassWeights,
}

impl Default for DafParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 2.0,
            delta: 1.0,
            class_weights: ClassWeights::uniform(),
        }
    }
}

impl DafParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha {} must be > 0", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("gamma {} must be >= 0", self.gamma)));
        }
        check_delta(self.delta)?;
        if let Some((p, w)) = self.class_weights.0.iter().find(|(_, w)| !(**w > 0.0)) {
            return Err(Error::InvalidParameter(format!("weight for {p} is {w}")));
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("delta {delta} must be > 0")));
    }
    Ok(())
}

fn check_shapes<A, B, D: Dimension>(
    pred: &ndarray::ArrayView<'_, A, D>,
    target: &ndarray::ArrayView<'_, B, D>,
) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("loss input"));
    }
    Ok(())
}

#[inline]
fn huber(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
fn huber_grad(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}

/// Mean Huber loss; the gradient is the clipped error divided by `N*T`.
pub fn huber_loss(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    delta: f64,
) -> Result<LossOutput<ndarray::Ix2>> {
    check_shapes(&pred, &target)?;
    check_delta(delta)?;
    let scale = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p, &y| {
            let e = p - y;
            value += huber(e, delta);
            *g = huber_grad(e, delta) * scale;
        });
    Ok(LossOutput {
        value: value * scale,
        grad,
    })
}

/// Focal-weighted Huber: `alpha * w_c * (|e|/delta)^gamma * huber(e)`, averaged.
pub fn daf_loss(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    params: &DafParams,
    class_of: ArrayView2<'_, PauseType>,
) -> Result<LossOutput<ndarray::Ix2>> {
    check_shapes(&pred, &target)?;
    check_shapes(&pred, &class_of)?;
    params.validate()?;
    let mut weights = [0.0; 4];
    for c in class_of.iter() {
        weights[c.index()] = params.class_weights.get(*c)?;
    }
    let DafParams {
        alpha, gamma, delta, ..
    } = *params;
    let scale = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .and(&class_of)
        .for_each(|g, &p, &y, c| {
            let e = p - y;
            let w = alpha * weights[c.index()];
            let a = e.abs();
            if a == 0.0 {
                // (0)^0 = 1 leaves the plain Huber term, which is 0 with zero slope.
                *g = 0.0;
                return;
            }
            let ratio = a / delta;
            let focal = if gamma == 0.0 { 1.0 } else { ratio.powf(gamma) };
            let h = huber(e, delta);
            value += w * focal * h;
            let dfocal = if gamma == 0.0 {
                0.0
            } else {
                gamma * ratio.powf(gamma - 1.0) * e.signum() / delta
            };
            *g = w * (dfocal * h + focal * huber_grad(e, delta)) * scale;
        });
    Ok(LossOutput {
        value: value * scale,
        grad,
    })
}

/// Mean softmax cross-entropy over `N x T x 4` logits.
pub fn ce_loss(
    logits: ArrayView3<'_, f64>,
    target: ArrayView2<'_, PauseType>,
) -> Result<LossOutput<ndarray::Ix3>> {
    let (n, t, k) = logits.dim();
    if (n, t) != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    if k != PauseType::ALL.len() {
        return Err(Error::ShapeMismatch(format!("expected 4 classes, got {k}")));
    }
    if n * t == 0 {
        return Err(Error::EmptyInput("loss input"));
    }
    let scale = 1.0 / (n * t) as f64;
    let mut value = 0.0;
    let mut grad = Array3::zeros((n, t, k));
    for i in 0..n {
        for j in 0..t {
            let row = logits.slice(ndarray::s![i, j, ..]);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|z| (z - m).exp()).sum();
            let log_z = m + sum.ln();
            let y = target[[i, j]].index();
            value += log_z - row[y];
            for c in 0..k {
                let p = (row[c] - log_z).exp();
                let onehot = if c == y { 1.0 } else { 0.0 };
                grad[[i, j, c]] = (p - onehot) * scale;
            }
        }
    }
    Ok(LossOutput {
        value: value * scale,
        grad,
    })
}

/// Mean binary cross-entropy on probabilities clamped to `[eps, 1-eps]`.
///
/// The gradient is taken through the clamp, so it is zero where the input
/// lies outside the clamp range.
pub fn bce_loss(
    prob: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> Result<LossOutput<ndarray::Ix2>> {
    check_shapes(&prob, &target)?;
    if let Some(&bad) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::NonBinaryTarget(bad));
    }
    let scale = 1.0 / prob.len() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(prob.raw_dim());
    Zip::from(&mut grad)
        .and(&prob)
        .and(&target)
        .for_each(|g, &p, &t| {
            let (v, d) = bce_term(p, t);
            value += v;
            *g = d * scale;
        });
    Ok(LossOutput {
        value: value * scale,
        grad,
    })
}

/// One clamped BCE term and its derivative with respect to `p`.
#[inline]
pub(crate) fn bce_term(p: f64, t: f64) -> (f64, f64) {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let v = -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
    let inside = p > PROB_EPS && p < 1.0 - PROB_EPS;
    let d = if inside {
        -t / pc + (1.0 - t) / (1.0 - pc)
    } else {
        0.0
    };
    (v, d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Huber,
    Daf,
    Bce,
    Coral,
}

/// Loss block of the training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub loss: LossKind,
    #[serde(default = "default_one")]
    pub delta: f64,
    #[serde(default = "default_one")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Absent means "inverse frequency on the training split".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<ClassWeights>,
}

fn default_one() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    2.0
}

impl LossConfig {
    pub fn new(loss: LossKind) -> Self {
        Self {
            loss,
            delta: 1.0,
            alpha: 1.0,
            gamma: 2.0,
            class_weights: None,
        }
    }

    pub fn daf_params(&self, fallback: &ClassWeights) -> DafParams {
        DafParams {
            alpha: self.alpha,
            gamma: self.gamma,
            delta: self.delta,
            class_weights: self.class_weights.clone().unwrap_or_else(|| fallback.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};
    use PauseType::*;

    fn single(p: f64, y: f64) -> (Array2<f64>, Array2<f64>) {
        (arr2(&[[p]]), arr2(&[[y]]))
    }

    #[test]
    fn huber_branches() {
        let (p, y) = single(0.5, 0.0);
        assert_eq!(huber_loss(p.view(), y.view(), 1.0).unwrap().value, 0.125);
        let (p, y) = single(2.0, 0.0);
        let out = huber_loss(p.view(), y.view(), 1.0).unwrap();
        assert_eq!(out.value, 1.5);
        assert_eq!(out.grad[[0, 0]], 1.0);
    }

    #[test]
    fn huber_continuous_at_delta() {
        for delta in [0.3, 1.0, 2.5] {
            assert_eq!(huber(delta, delta), delta * delta / 2.0);
            assert_eq!(delta * (delta - delta / 2.0), delta * delta / 2.0);
            assert!((huber(delta + 1e-12, delta) - delta * delta / 2.0).abs() < 1e-11);
        }
    }

    #[test]
    fn huber_errors() {
        let a = Array2::zeros((2, 3));
        let b = Array2::zeros((3, 2));
        assert!(huber_loss(a.view(), b.view(), 1.0).is_err());
        assert!(huber_loss(a.view(), a.view(), 0.0).is_err());
    }

    #[test]
    fn daf_direct_evaluation() {
        let (p, y) = single(2.0, 0.0);
        let mut weights = ClassWeights::uniform();
        weights.0.insert(S, 3.0);
        let params = DafParams {
            alpha: 2.0,
            gamma: 1.0,
            delta: 1.0,
            class_weights: weights,
        };
        let cls = arr2(&[[S]]);
        let out = daf_loss(p.view(), y.view(), &params, cls.view()).unwrap();
        assert_eq!(out.value, 18.0);
    }

    #[test]
    fn daf_zero_error_contributes_nothing() {
        let p = arr2(&[[1.0, 2.0, 0.0]]);
        let y = arr2(&[[1.0, 0.0, 0.0]]);
        let cls = arr2(&[[S, B, O]]);
        for gamma in [0.0, 0.5, 2.0] {
            let params = DafParams {
                gamma,
                ..Default::default()
            };
            let out = daf_loss(p.view(), y.view(), &params, cls.view()).unwrap();
            assert_eq!(out.grad[[0, 0]], 0.0);
            assert_eq!(out.grad[[0, 2]], 0.0);
            assert!(out.grad[[0, 1]] > 0.0);
        }
    }

    #[test]
    fn daf_missing_weight() {
        let (p, y) = single(1.0, 0.0);
        let params = DafParams {
            class_weights: ClassWeights(BTreeMap::from([(O, 1.0)])),
            ..Default::default()
        };
        let cls = arr2(&[[BS]]);
        assert!(matches!(
            daf_loss(p.view(), y.view(), &params, cls.view()),
            Err(Error::MissingClassWeight(BS))
        ));
    }

    #[test]
    fn ce_uniform_and_confident() {
        let logits = Array3::zeros((2, 3, 4));
        let target = arr2(&[[O, S, B], [BS, BS, O]]);
        let out = ce_loss(logits.view(), target.view()).unwrap();
        assert!((out.value - 4f64.ln()).abs() < 1e-12);

        let mut confident = Array3::zeros((1, 2, 4));
        confident[[0, 0, 2]] = 20.0;
        confident[[0, 1, 0]] = 20.0;
        let t = arr2(&[[B, O]]);
        assert!(ce_loss(confident.view(), t.view()).unwrap().value < 1e-4);
    }

    #[test]
    fn ce_gradient_sums_to_zero_per_frame() {
        let logits = Array3::from_shape_fn((2, 5, 4), |(i, j, k)| ((i * 31 + j * 7 + k * 3) % 11) as f64 * 0.3 - 1.0);
        let target = Array2::from_shape_fn((2, 5), |(i, j)| PauseType::ALL[(i + j) % 4]);
        let out = ce_loss(logits.view(), target.view()).unwrap();
        for i in 0..2 {
            for j in 0..5 {
                let s: f64 = out.grad.slice(ndarray::s![i, j, ..]).sum();
                assert!(s.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ce_wrong_class_count() {
        let logits = Array3::zeros((1, 2, 3));
        let t = arr2(&[[O, O]]);
        assert!(ce_loss(logits.view(), t.view()).is_err());
    }

    #[test]
    fn bce_values() {
        let (p, t) = single(0.5, 1.0);
        assert!((bce_loss(p.view(), t.view()).unwrap().value - 2f64.ln()).abs() < 1e-12);
        let (p, t) = single(1.0, 1.0);
        assert!(bce_loss(p.view(), t.view()).unwrap().value <= 1e-6);
        let (p, t) = single(0.0, 0.0);
        assert!(bce_loss(p.view(), t.view()).unwrap().value <= 1e-6);
        let (p, t) = single(0.9, 0.0);
        assert!((bce_loss(p.view(), t.view()).unwrap().value - 10f64.ln()).abs() < 1e-9);
        let (p, t) = single(0.9, 0.5);
        assert!(matches!(bce_loss(p.view(), t.view()), Err(Error::NonBinaryTarget(_))));
    }

    #[test]
    fn inverse_frequency_mean_one() {
        let labels = [O, O, O, O, O, O, S, S, B, BS];
        let w = ClassWeights::inverse_frequency(labels.iter());
        let mean = w.0.values().sum::<f64>() / 4.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(w.get(O).unwrap() < w.get(S).unwrap());
        assert!((w.get(B).unwrap() - w.get(BS).unwrap()).abs() < 1e-12);

        let w = ClassWeights::inverse_frequency([O, O, S].iter());
        assert_eq!(w.get(B).unwrap(), w.get(S).unwrap());
    }

    #[test]
    fn loss_config_json() {
        let cfg: LossConfig = serde_json::from_str(r#"{"loss":"daf","gamma":1.5}"#).unwrap();
        assert_eq!(cfg.loss, LossKind::Daf);
        assert_eq!((cfg.delta, cfg.alpha, cfg.gamma), (1.0, 1.0, 1.5));
        let with_w: LossConfig = serde_json::from_str(
            r#"{"loss":"daf","class_weights":{"O":0.5,"S":1.5,"B":1.0,"BS":1.0}}"#,
        )
        .unwrap();
        assert_eq!(with_w.class_weights.unwrap().get(S).unwrap(), 1.5);
    }
}
