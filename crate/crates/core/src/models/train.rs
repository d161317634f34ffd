//! Mini-batch training with Adam and early stopping on validation loss.

use ndarray::{Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{HeadKind, SeqModel};
use crate::error::{Error, Result};
use crate::exertion::{coral_loss, ordinal_targets};
use crate::labels::PauseType;
use crate::losses::{
    bce_loss, ce_loss, daf_loss, huber_loss, ClassWeights, DafParams, LossConfig, LossKind,
};
use crate::protocol::{BATCH_SIZE, LEARNING_RATE};

/// Adaptive-moment optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self::with_constants(n_params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(n_params: usize, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Frames(Vec<PauseType>),
    /// Ordinal class in `1..=K`.
    Ordinal(usize),
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub x: Array2<f64>,
    pub target: Target,
}

impl Sample {
    pub fn frames(x: Array2<f64>, labels: Vec<PauseType>) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "feature frames vs label frames",
                left: x.nrows(),
                right: labels.len(),
            });
        }
        Ok(Self {
            x,
            target: Target::Frames(labels),
        })
    }

    pub fn ordinal(x: Array2<f64>, class: usize) -> Self {
        Self {
            x,
            target: Target::Ordinal(class),
        }
    }

    /// Weight of this sample in a batch mean: its frame count for frame-wise
    /// heads, one for sequence-level heads.
    fn weight(&self) -> f64 {
        match &self.target {
            Target::Frames(l) => l.len() as f64,
            Target::Ordinal(_) => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Worker threads for per-sample gradients; results do not depend on it.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_threads() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: BATCH_SIZE,
            learning_rate: LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            loss: LossConfig::new(LossKind::Ce),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("max_epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// The loss that pairs with `head`, or an error when the configured one does not fit.
    pub fn check_head(&self, head: HeadKind) -> Result<()> {
        let ok = matches!(
            (head, self.loss.loss),
            (HeadKind::Classification, LossKind::Ce)
                | (HeadKind::Regression, LossKind::Huber | LossKind::Daf)
                | (HeadKind::Binary, LossKind::Bce)
                | (HeadKind::Ordinal { .. }, LossKind::Coral)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss {:?} does not fit a {head:?} head",
                self.loss.loss
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

/// Loss settings resolved against a training set.
#[derive(Clone, Debug)]
pub struct Objective {
    kind: LossKind,
    delta: f64,
    daf: DafParams,
}

impl Objective {
    pub fn new(cfg: &LossConfig, train: &[Sample]) -> Self {
        let labels = train.iter().flat_map(|s| match &s.target {
            Target::Frames(l) => l.as_slice(),
            Target::Ordinal(_) => &[],
        });
        let fallback = ClassWeights::inverse_frequency(labels);
        Self {
            kind: cfg.loss,
            delta: cfg.delta,
            daf: cfg.daf_params(&fallback),
        }
    }

    /// Mean loss of one sample and its gradient with respect to the model outputs.
    pub fn evaluate(&self, outputs: ArrayView2<'_, f64>, target: &Target) -> Result<(f64, Array2<f64>)> {
        match (self.kind, target) {
            (LossKind::Ce, Target::Frames(labels)) => {
                let (t, k) = outputs.dim();
                let logits = outputs.to_owned().into_shape_with_order((1, t, k)).map_err(shape_err)?;
                let tgt = Array2::from_shape_vec((1, labels.len()), labels.clone()).map_err(shape_err)?;
                let out = ce_loss(logits.view(), tgt.view())?;
                Ok((out.value, squeeze3(out.grad)?))
            }
            (LossKind::Huber | LossKind::Daf, Target::Frames(labels)) => {
                let pred = outputs.t();
                let tgt = Array2::from_shape_fn((1, labels.len()), |(_, t)| labels[t].code() as f64);
                let out = if self.kind == LossKind::Huber {
                    huber_loss(pred, tgt.view(), self.delta)?
                } else {
                    let cls = Array2::from_shape_vec((1, labels.len()), labels.clone()).map_err(shape_err)?;
                    daf_loss(pred, tgt.view(), &self.daf, cls.view())?
                };
                Ok((out.value, out.grad.reversed_axes()))
            }
            (LossKind::Bce, Target::Frames(labels)) => {
                let tgt = Array2::from_shape_fn((labels.len(), 1), |(t, _)| {
                    if labels[t].is_pause() {
                        1.0
                    } else {
                        0.0
                    }
                });
                let out = bce_loss(outputs, tgt.view())?;
                Ok((out.value, out.grad))
            }
            (LossKind::Coral, Target::Ordinal(class)) => {
                let k = outputs.ncols() + 1;
                let t = ordinal_targets(*class, k)?;
                let tgt = Array2::from_shape_vec((1, k - 1), t).map_err(shape_err)?;
                let out = coral_loss(outputs, tgt.view())?;
                Ok((out.value, out.grad))
            }
            (kind, _) => Err(Error::Config(format!(
                "loss {kind:?} does not match the sample target type"
            ))),
        }
    }
}

fn shape_err(e: ndarray::ShapeError) -> Error {
    Error::ShapeMismatch(e.to_string())
}

fn squeeze3(a: Array3<f64>) -> Result<Array2<f64>> {
    let (_, t, k) = a.dim();
    a.into_shape_with_order((t, k)).map_err(shape_err)
}

/// Loss and gradient of one sample.
pub fn sample_gradient(model: &SeqModel, objective: &Objective, sample: &Sample) -> Result<(f64, Vec<f64>)> {
    let cache = model.forward_cached(sample.x.view())?;
    let (value, dout) = objective.evaluate(cache.outputs().view(), &sample.target)?;
    let grad = model.backward(&cache, dout.view())?;
    Ok((value, grad))
}

/// Weighted mean loss and gradient over a batch, summed in sample order so the
/// result does not depend on the thread count.
fn batch_gradient(
    model: &SeqModel,
    objective: &Objective,
    batch: &[&Sample],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, Vec<f64>)> {
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = match pool {
        Some(pool) => pool.install(|| {
            batch
                .par_iter()
                .map(|s| sample_gradient(model, objective, s))
                .collect()
        }),
        None => batch
            .iter()
            .map(|s| sample_gradient(model, objective, s))
            .collect(),
    };
    let total: f64 = batch.iter().map(|s| s.weight()).sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.params().len()];
    for (s, r) in batch.iter().zip(per_sample) {
        let (v, g) = r?;
        let w = s.weight() / total;
        loss += w * v;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += w * gi;
        }
    }
    Ok((loss, grad))
}

/// Mean loss and accuracy of `model` on `samples`.
pub fn evaluate(model: &SeqModel, objective: &Objective, samples: &[Sample]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut weight = 0.0;
    let mut correct = 0usize;
    let mut count = 0usize;
    for s in samples {
        let y = model.forward(s.x.view())?;
        let (v, _) = objective.evaluate(y.view(), &s.target)?;
        loss += v * s.weight();
        weight += s.weight();
        match &s.target {
            Target::Frames(labels) => {
                let pred = model.frame_classes(y.view())?;
                let binary = model.config().head == HeadKind::Binary;
                correct += pred
                    .iter()
                    .zip(labels)
                    .filter(|(p, l)| if binary { p.is_pause() == l.is_pause() } else { p == l })
                    .count();
                count += labels.len();
            }
            Target::Ordinal(class) => {
                let row: Vec<f64> = y.row(0).to_vec();
                correct += usize::from(crate::exertion::class_from_probabilities(&row) == *class);
                count += 1;
            }
        }
    }
    Ok((loss / weight, correct as f64 / count as f64))
}

/// Trains `model` in place and leaves it at the best-validation parameters.
pub fn train(model: &mut SeqModel, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_head(model.config().head)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let objective = Objective::new(&cfg.loss, train);
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?,
        )
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::with_constants(model.params().len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().to_vec());
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = batch_gradient(model, &objective, &batch, pool.as_ref())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: loss,
                });
            }
            let w: f64 = batch.iter().map(|s| s.weight()).sum();
            epoch_loss += loss * w;
            epoch_weight += w;
            adam.step(model.params_mut(), &grad);
        }
        let (val_loss, val_accuracy) = evaluate(model, &objective, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                value: val_loss,
            });
        }
        log::info!(
            "epoch {epoch}: train {:.5} val {val_loss:.5} acc {val_accuracy:.4}",
            epoch_loss / epoch_weight
        );
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / epoch_weight,
            val_loss,
            val_accuracy,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params().to_vec());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.set_params(best.2)?;
    Ok(TrainOutcome {
        history,
        best_epoch: best.1,
        best_val_loss: best.0,
        steps: adam.steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;

    fn toy(n: usize, frames: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let labels: Vec<PauseType> = (0..frames)
                    .map(|t| if (t + i) % 6 < 3 { PauseType::O } else { PauseType::B })
                    .collect();
                let x = Array2::from_shape_fn((frames, 2), |(t, f)| {
                    let on = labels[t].is_pause() as u8 as f64;
                    if f == 0 {
                        2.0 * on - 1.0
                    } else {
                        0.1 * ((t * 7 + i) % 5) as f64
                    }
                });
                Sample::frames(x, labels).unwrap()
            })
            .collect()
    }

    #[test]
    fn adam_with_zero_rate_keeps_parameters() {
        let mut adam = Adam::new(3, 0.0);
        let mut p = vec![1.0, -2.0, 3.5];
        for _ in 0..10 {
            adam.step(&mut p, &[0.3, -1.0, 7.0]);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[4.0, -0.5]);
        assert!((p[0] + 0.1).abs() < 1e-6);
        assert!((p[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_training_leaves_model_unchanged() {
        let data = toy(4, 12);
        let mut model = SeqModel::new(ModelConfig::new(2, 3, HeadKind::Classification), 1).unwrap();
        let before = model.params().to_vec();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        train(&mut model, &data, &data, &cfg).unwrap();
        assert_eq!(model.params(), &before[..]);
    }

    #[test]
    fn training_is_deterministic_and_thread_count_invariant() {
        let data = toy(6, 12);
        let cfg = TrainConfig {
            learning_rate: 0.02,
            max_epochs: 4,
            batch_size: 4,
            seed: 7,
            ..Default::default()
        };
        let run = |threads: usize| {
            let mut model = SeqModel::new(ModelConfig::new(2, 3, HeadKind::Classification), 3).unwrap();
            let c = TrainConfig { threads, ..cfg.clone() };
            let out = train(&mut model, &data[..4], &data[4..], &c).unwrap();
            (out, model.params().to_vec())
        };
        let (a, pa) = run(1);
        let (b, pb) = run(1);
        let (c, pc) = run(2);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a, c);
        for (x, y) in pa.iter().zip(&pc) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let data = toy(8, 18);
        let mut model = SeqModel::new(ModelConfig::new(2, 4, HeadKind::Classification), 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            max_epochs: 40,
            patience: 40,
            batch_size: 4,
            ..Default::default()
        };
        let out = train(&mut model, &data[..6], &data[6..], &cfg).unwrap();
        assert!(out.history.last().unwrap().val_accuracy >= 0.9, "{:?}", out.history.last());
    }

    #[test]
    fn rejects_empty_sets_and_mismatched_losses() {
        let data = toy(2, 6);
        let mut model = SeqModel::new(ModelConfig::new(2, 3, HeadKind::Regression), 1).unwrap();
        let cfg = TrainConfig {
            loss: LossConfig::new(LossKind::Huber),
            ..Default::default()
        };
        assert!(matches!(train(&mut model, &[], &data, &cfg), Err(Error::EmptyInput(_))));
        assert!(matches!(train(&mut model, &data, &[], &cfg), Err(Error::EmptyInput(_))));
        let ce = TrainConfig::default();
        assert!(matches!(train(&mut model, &data, &data, &ce), Err(Error::Config(_))));
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train(&mut model, &data, &data, &bad).is_err());
    }

    #[test]
    fn diverging_run_reports_non_finite_loss() {
        let mut data = toy(2, 6);
        data[0].x[[0, 0]] = f64::NAN;
        let mut model = SeqModel::new(ModelConfig::new(2, 3, HeadKind::Classification), 1).unwrap();
        let err = train(&mut model, &data, &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }));
    }
}
