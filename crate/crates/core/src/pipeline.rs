//! End-to-end runs: inputs for a setup, windowing, training, post-processing
//! and event scoring, collected into one report.
//!
//! Setup 1 feeds one feature matrix, setup 2 the fused acoustic + embedding
//! matrix and setup 3 the fused matrix re-weighted by Stage-1 pause
//! probabilities. All three share the same windowing, model and scoring code.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataprep::{segment_windows, split_by_subject, Split, SplitSpec, SynthCorpus, Window};
use crate::error::{Error, Result};
use crate::evaluation::{greedy_match, EventAccuracy, MatchConfig, MatchCounts};
use crate::exertion::{cluster_exertion, coral_predict, fit_coral_head, pool_features, CoralFitConfig};
use crate::features::{fuse, resample_embedding, FeatureKind, FeatureMatrix};
use crate::labels::{events_from_labels, FrameLabelSeq, PauseType};
use crate::losses::{LossConfig, LossKind};
use crate::manifest::{DatasetManifest, RecordingMeta, SpeechTask};
use crate::models::{
    reweight, stage1_detect, train, ConvConfig, HeadKind, ModelConfig, Sample, SeqModel,
    Stage1Output, TrainConfig, TrainOutcome,
};
use crate::postproc::{
    clean_classification, lowpass, mask_tail, regression_labels, sweep_thresholds, CleanConfig,
    PostprocConfig, SweepItem, ThresholdSpec,
};
use crate::protocol::{ProtocolConstants, FRAME_RATE_HZ, SNIPPET_SECONDS, SPLIT_FRACTIONS, TRAIN_STRIDE_SECONDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setup {
    Single,
    Fused,
    Gated,
}

impl Setup {
    pub fn number(self) -> u8 {
        match self {
            Setup::Single => 1,
            Setup::Fused => 2,
            Setup::Gated => 3,
        }
    }
}

impl TryFrom<u8> for Setup {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Setup::Single),
            2 => Ok(Setup::Fused),
            3 => Ok(Setup::Gated),
            other => Err(Error::Config(format!("setup must be 1, 2 or 3, got {other}"))),
        }
    }
}

impl From<Setup> for u8 {
    fn from(s: Setup) -> u8 {
        s.number()
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn head(self) -> HeadKind {
        match self {
            Task::Classification => HeadKind::Classification,
            Task::Regression => HeadKind::Regression,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage1Mode {
    /// Train a binary detector on acoustic features.
    Trained,
    /// `omega = 1` everywhere.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub mode: Stage1Mode,
    pub hidden_dim: usize,
    pub layers: usize,
    pub train: TrainConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            mode: Stage1Mode::Trained,
            hidden_dim: 128,
            layers: 2,
            train: TrainConfig {
                loss: LossConfig::new(LossKind::Bce),
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub setup: Setup,
    pub task: Task,
    /// Input of setup 1; acoustic part of setups 2 and 3.
    pub feature: FeatureKind,
    /// Embedding layer for setups 2 and 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<FeatureKind>,
    pub hidden_dim: usize,
    pub layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
    pub train: TrainConfig,
    pub stage1: Stage1Config,
    pub postproc: PostprocConfig,
    pub matching: MatchConfig,
    pub split_fractions: [f64; 3],
    pub split_seed: u64,
    pub model_seed: u64,
    pub train_stride_s: f64,
    /// Stride of validation and test windows.
    pub eval_stride_s: f64,
}

impl PipelineConfig {
    /// Protocol defaults for a setup and task; setup 3 regression uses the
    /// duration-aware focal loss, other regression runs Huber.
    pub fn new(setup: Setup, task: Task) -> Self {
        let loss = match (task, setup) {
            (Task::Classification, _) => LossKind::Ce,
            (Task::Regression, Setup::Gated) => LossKind::Daf,
            (Task::Regression, _) => LossKind::Huber,
        };
        Self {
            setup,
            task,
            feature: FeatureKind::Mfb,
            embedding: (setup != Setup::Single).then_some(FeatureKind::Emb6),
            hidden_dim: 32,
            layers: 2,
            conv: None,
            train: TrainConfig {
                loss: LossConfig::new(loss),
                ..Default::default()
            },
            stage1: Stage1Config::default(),
            postproc: PostprocConfig::default(),
            matching: MatchConfig::default(),
            split_fractions: SPLIT_FRACTIONS,
            split_seed: 0,
            model_seed: 0,
            train_stride_s: TRAIN_STRIDE_SECONDS,
            eval_stride_s: SNIPPET_SECONDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.setup, self.embedding) {
            (Setup::Single, _) => {}
            (_, None) => {
                return Err(Error::Config(format!(
                    "setup {} needs an embedding layer",
                    self.setup
                )))
            }
            (_, Some(e)) if !e.is_embedding() => {
                return Err(Error::Config(format!("{e} is not an embedding layer")))
            }
            _ => {}
        }
        if self.setup != Setup::Single && !self.feature.is_acoustic() {
            return Err(Error::Config(format!(
                "setup {} needs acoustic features, got {}",
                self.setup, self.feature
            )));
        }
        if self.feature == FeatureKind::Fused {
            return Err(Error::Config("fused matrices are built by the pipeline".into()));
        }
        self.train.validate()?;
        self.train.check_head(self.task.head())?;
        self.postproc.validate()?;
        self.matching.validate()?;
        if !(self.train_stride_s > 0.0 && self.eval_stride_s > 0.0) {
            return Err(Error::Config("window strides must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize, head: HeadKind) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            bidirectional: true,
            head,
            conv: self.conv,
        }
    }

    /// Feature kinds each recording must provide.
    pub fn required_features(&self) -> Vec<FeatureKind> {
        let mut kinds = vec![self.feature];
        kinds.extend(self.embedding.filter(|_| self.setup != Setup::Single));
        kinds
    }
}

/// One recording with its labels and feature matrices in memory.
#[derive(Clone, Debug)]
pub struct RecordData {
    pub meta: RecordingMeta,
    pub labels: FrameLabelSeq,
    pub features: BTreeMap<FeatureKind, FeatureMatrix>,
}

impl RecordData {
    pub fn feature(&self, kind: FeatureKind) -> Result<&FeatureMatrix> {
        self.features.get(&kind).ok_or_else(|| Error::MissingFile {
            id: self.meta.id.clone(),
            path: format!("<{kind} features>").into(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PipelineData {
    pub records: Vec<RecordData>,
}

impl PipelineData {
    pub fn from_synth(corpus: &SynthCorpus) -> Self {
        let records = corpus
            .recordings
            .iter()
            .zip(&corpus.embeddings)
            .map(|(rec, embs)| {
                let mut features = BTreeMap::new();
                features.insert(rec.acoustic.kind(), rec.acoustic.clone());
                for e in embs {
                    features.insert(e.kind(), e.clone());
                }
                RecordData {
                    meta: rec.meta.clone(),
                    labels: rec.labels.clone(),
                    features,
                }
            })
            .collect();
        Self { records }
    }

    /// Loads labels and the requested matrices; embeddings whose frame count
    /// differs from the labels are linearly resampled onto the label grid.
    pub fn load(manifest: &DatasetManifest, kinds: &[FeatureKind]) -> Result<Self> {
        let mut records = Vec::with_capacity(manifest.records.len());
        for rec in &manifest.records {
            let id = rec.id().to_string();
            let labels_path = rec.labels.as_ref().ok_or_else(|| Error::MissingFile {
                id: id.clone(),
                path: "<labels>".into(),
            })?;
            let labels = FrameLabelSeq::load(&manifest.resolve(labels_path))
                .map_err(|e| e.in_stage("load", &id))?;
            let mut features = BTreeMap::new();
            for &kind in kinds {
                let path = rec.features.get(kind.name()).ok_or_else(|| Error::MissingFile {
                    id: id.clone(),
                    path: format!("<{kind} features>").into(),
                })?;
                let mut m = FeatureMatrix::load(&manifest.resolve(path))
                    .map_err(|e| e.in_stage("load", &id))?;
                if m.frames() != labels.len() {
                    if kind.is_embedding() {
                        m = resample_embedding(&m, labels.len()).map_err(|e| e.in_stage("load", &id))?;
                    } else {
                        return Err(Error::LengthMismatch {
                            what: "feature frames vs label frames",
                            left: m.frames(),
                            right: labels.len(),
                        }
                        .in_stage("load", &id));
                    }
                }
                features.insert(kind, m);
            }
            records.push(RecordData {
                meta: rec.meta.clone(),
                labels,
                features,
            });
        }
        Ok(Self { records })
    }

    pub fn metas(&self) -> impl Iterator<Item = &RecordingMeta> {
        self.records.iter().map(|r| &r.meta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub recording_id: String,
    pub frame_start: usize,
    pub counts: MatchCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub mode: Stage1Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainOutcome>,
    /// Frame-level ROC AUC of omega on validation windows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub duration_shares: [f64; 3],
    pub balanced: bool,
    pub recordings: [usize; 3],
    pub windows: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResults {
    pub accuracy: EventAccuracy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<[f64; 3]>,
    pub training: TrainOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Stage1Summary>,
    pub split: SplitSummary,
    pub windows: Vec<WindowScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub protocol: ProtocolConstants,
    pub results: PipelineResults,
}

impl PipelineReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Per-window rows: recording, first frame, then per-type reference and correct counts.
    pub fn windows_csv(&self) -> String {
        let mut out = String::from("recording_id,frame_start,gt_S,gt_B,gt_BS,correct_S,correct_B,correct_BS,pred_events\n");
        for w in &self.results.windows {
            let c = &w.counts;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                w.recording_id,
                w.frame_start,
                c.gt_events[0],
                c.gt_events[1],
                c.gt_events[2],
                c.correct[0],
                c.correct[1],
                c.correct[2],
                c.pred_events
            ));
        }
        out
    }
}

struct WindowItem<'a> {
    record: &'a RecordData,
    window: Window,
}

fn windows_for<'a>(data: &'a PipelineData, spec: &SplitSpec, split: Split, stride: f64) -> Result<Vec<WindowItem<'a>>> {
    let mut out = Vec::new();
    for rec in &data.records {
        if spec.split_of(&rec.meta) != Some(split) {
            continue;
        }
        let windows = segment_windows(&rec.meta, stride).map_err(|e| e.in_stage("segment", &rec.meta.id))?;
        for w in windows {
            if w.frame_end > rec.labels.len() {
                return Err(Error::LengthMismatch {
                    what: "window end vs label frames",
                    left: w.frame_end,
                    right: rec.labels.len(),
                }
                .in_stage("segment", &rec.meta.id));
            }
            out.push(WindowItem { record: rec, window: w });
        }
    }
    Ok(out)
}

fn make_samples(items: &[WindowItem<'_>], inputs: &BTreeMap<String, FeatureMatrix>) -> Result<Vec<Sample>> {
    items
        .iter()
        .map(|it| {
            let id = &it.record.meta.id;
            let m = &inputs[id];
            let (a, b) = (it.window.frame_start, it.window.frame_end);
            let x = m.slice_frames(a, b).map_err(|e| e.in_stage("window", id))?.into_data();
            Sample::frames(x, it.record.labels.labels()[a..b].to_vec()).map_err(|e| e.in_stage("window", id))
        })
        .collect()
}

/// ROC AUC by the rank-sum statistic (ties get average ranks).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != positive.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Model input matrix per recording id for the configured setup. Setup 3
/// uses `detector` for omega, or omega = 1 when none is given.
pub fn build_inputs(
    cfg: &PipelineConfig,
    data: &PipelineData,
    detector: Option<&SeqModel>,
) -> Result<BTreeMap<String, FeatureMatrix>> {
    let mut inputs = BTreeMap::new();
    for rec in &data.records {
        let id = &rec.meta.id;
        let a = rec.feature(cfg.feature)?;
        let m = match cfg.setup {
            Setup::Single => a.clone(),
            Setup::Fused => {
                let emb = rec.feature(cfg.embedding.expect("validated"))?;
                fuse(a, emb).map_err(|e| e.in_stage("fuse", id))?
            }
            Setup::Gated => {
                let emb = rec.feature(cfg.embedding.expect("validated"))?;
                let omega = match detector {
                    Some(det) => stage1_detect(det, a).map_err(|e| e.in_stage("stage1", id))?,
                    None => Stage1Output::constant(1.0, a.frames())?,
                };
                reweight(&omega, a, emb).map_err(|e| e.in_stage("reweight", id))?
            }
        };
        inputs.insert(id.clone(), m);
    }
    Ok(inputs)
}

/// Trains the Stage-1 binary detector on acoustic windows of the train split.
pub fn train_stage1(cfg: &PipelineConfig, data: &PipelineData, spec: &SplitSpec) -> Result<(SeqModel, Stage1Summary)> {
    let acoustic: BTreeMap<String, FeatureMatrix> = data
        .records
        .iter()
        .map(|r| Ok((r.meta.id.clone(), r.feature(cfg.feature)?.clone())))
        .collect::<Result<_>>()?;
    let tr = make_samples(&windows_for(data, spec, Split::Train, cfg.train_stride_s)?, &acoustic)?;
    let va = make_samples(&windows_for(data, spec, Split::Val, cfg.eval_stride_s)?, &acoustic)?;
    let mcfg = ModelConfig {
        input_dim: cfg.feature.dims(),
        hidden_dim: cfg.stage1.hidden_dim,
        layers: cfg.stage1.layers,
        bidirectional: true,
        head: HeadKind::Binary,
        conv: None,
    };
    let mut det = SeqModel::new(mcfg, crate::dataprep::derive_seed(cfg.model_seed, 1))?;
    let outcome = train(&mut det, &tr, &va, &cfg.stage1.train).map_err(|e| e.in_stage("stage1-train", "*"))?;
    let mut scores = Vec::new();
    let mut positive = Vec::new();
    for s in &va {
        let y = det.forward(s.x.view())?;
        scores.extend(y.column(0).iter().copied());
        if let crate::models::Target::Frames(l) = &s.target {
            positive.extend(l.iter().map(|p| p.is_pause()));
        }
    }
    let summary = Stage1Summary {
        mode: Stage1Mode::Trained,
        training: Some(outcome),
        val_auc: roc_auc(&scores, &positive),
    };
    Ok((det, summary))
}

/// Everything learned from the train and validation splits.
#[derive(Clone, Debug)]
pub struct FittedPipeline {
    pub spec: SplitSpec,
    pub model: SeqModel,
    pub detector: Option<SeqModel>,
    pub training: TrainOutcome,
    pub stage1: Option<Stage1Summary>,
    /// Regression thresholds; `None` for classification.
    pub thresholds: Option<[f64; 3]>,
}

/// Raw model outputs for one evaluation window.
#[derive(Clone, Debug)]
pub struct WindowOutput {
    pub recording_id: String,
    pub window: Window,
    pub outputs: ndarray::Array2<f64>,
}

/// Split, Stage-1 (setup 3), training and, for regression, threshold selection.
pub fn fit_pipeline(cfg: &PipelineConfig, data: &PipelineData) -> Result<FittedPipeline> {
    cfg.validate()?;
    let spec = split_by_subject(data.metas(), cfg.split_fractions, cfg.split_seed)?;
    let (detector, stage1) = match (cfg.setup, cfg.stage1.mode) {
        (Setup::Gated, Stage1Mode::Trained) => {
            let (det, summary) = train_stage1(cfg, data, &spec)?;
            (Some(det), Some(summary))
        }
        (Setup::Gated, Stage1Mode::Identity) => (
            None,
            Some(Stage1Summary {
                mode: Stage1Mode::Identity,
                training: None,
                val_auc: None,
            }),
        ),
        _ => (None, None),
    };
    let inputs = build_inputs(cfg, data, detector.as_ref())?;

    let train_items = windows_for(data, &spec, Split::Train, cfg.train_stride_s)?;
    let val_items = windows_for(data, &spec, Split::Val, cfg.eval_stride_s)?;
    let train_set = make_samples(&train_items, &inputs)?;
    let val_set = make_samples(&val_items, &inputs)?;
    log::info!(
        "setup {} {:?}: {} train / {} val windows",
        cfg.setup,
        cfg.task,
        train_set.len(),
        val_set.len()
    );

    let input_dim = inputs.values().next().ok_or(Error::EmptyInput("recordings"))?.dims();
    let mut model = SeqModel::new(cfg.model_config(input_dim, cfg.task.head()), cfg.model_seed)?;
    let training = train(&mut model, &train_set, &val_set, &cfg.train).map_err(|e| e.in_stage("train", "*"))?;

    let thresholds = match (cfg.task, &cfg.postproc.thresholds) {
        (Task::Classification, _) => None,
        (Task::Regression, ThresholdSpec::Fixed(t)) => Some(*t),
        (Task::Regression, ThresholdSpec::Sweep) => {
            let items = val_set
                .iter()
                .zip(&val_items)
                .map(|(s, it)| {
                    let y = model.forward(s.x.view())?;
                    let raw: Vec<f64> = y.column(0).to_vec();
                    Ok(SweepItem {
                        filtered: lowpass(&raw, cfg.postproc.cutoff_hz, FRAME_RATE_HZ as f64)?,
                        truth: it.record.labels.slice(it.window.frame_start, it.window.frame_end)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(sweep_thresholds(&items, &cfg.postproc, &cfg.matching)?.0)
        }
    };
    Ok(FittedPipeline {
        spec,
        model,
        detector,
        training,
        stage1,
        thresholds,
    })
}

/// Model outputs on every evaluation-stride window of one split.
pub fn predict_split(
    cfg: &PipelineConfig,
    data: &PipelineData,
    fitted: &FittedPipeline,
    split: Split,
) -> Result<Vec<WindowOutput>> {
    let inputs = build_inputs(cfg, data, fitted.detector.as_ref())?;
    let items = windows_for(data, &fitted.spec, split, cfg.eval_stride_s)?;
    items
        .iter()
        .map(|it| {
            let id = &it.record.meta.id;
            let x = inputs[id]
                .slice_frames(it.window.frame_start, it.window.frame_end)
                .map_err(|e| e.in_stage("window", id))?;
            let outputs = fitted.model.forward(x.view()).map_err(|e| e.in_stage("predict", id))?;
            Ok(WindowOutput {
                recording_id: id.clone(),
                window: it.window.clone(),
                outputs,
            })
        })
        .collect()
}

/// Post-processed, tail-masked labels for one window of model outputs.
pub fn postprocess_outputs(
    cfg: &PipelineConfig,
    outputs: ndarray::ArrayView2<'_, f64>,
    thresholds: Option<[f64; 3]>,
) -> Result<FrameLabelSeq> {
    let pp = &cfg.postproc;
    match cfg.task {
        Task::Classification => {
            if outputs.ncols() != 4 {
                return Err(Error::ShapeMismatch(format!("expected 4 logits per frame, got {}", outputs.ncols())));
            }
            let labels = outputs
                .rows()
                .into_iter()
                .map(|r| {
                    let best = (0..4).fold(0, |b, i| if r[i] > r[b] { i } else { b });
                    PauseType::ALL[best]
                })
                .collect();
            let seq = FrameLabelSeq::new(labels)?;
            mask_tail(&clean_classification(&seq, CleanConfig::from(pp)), pp.mask_tail_frames)
        }
        Task::Regression => {
            let t = thresholds.ok_or_else(|| Error::Config("regression post-processing needs thresholds".into()))?;
            let raw: Vec<f64> = outputs.column(0).to_vec();
            let filtered = lowpass(&raw, pp.cutoff_hz, FRAME_RATE_HZ as f64)?;
            regression_labels(&filtered, t, pp)
        }
    }
}

/// Scores predicted window labels against the tail-masked reference.
pub fn score_window(
    cfg: &PipelineConfig,
    record: &RecordData,
    window: &Window,
    predicted: &FrameLabelSeq,
) -> Result<WindowScore> {
    let truth = record.labels.slice(window.frame_start, window.frame_end)?;
    let truth = mask_tail(&truth, cfg.postproc.mask_tail_frames)?;
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs reference frames",
            left: predicted.len(),
            right: truth.len(),
        }
        .in_stage("eval", &record.meta.id));
    }
    let gt = events_from_labels(truth.labels());
    let m = greedy_match(&gt, &events_from_labels(predicted.labels()), &cfg.matching);
    Ok(WindowScore {
        recording_id: record.meta.id.clone(),
        frame_start: window.frame_start,
        counts: MatchCounts::from_result(&m, &gt),
    })
}

/// Assembles a report from a fitted pipeline and scored test windows.
pub fn assemble_report(
    cfg: &PipelineConfig,
    data: &PipelineData,
    fitted: &FittedPipeline,
    windows: Vec<WindowScore>,
) -> PipelineReport {
    let total: MatchCounts = windows.iter().map(|w| w.counts).sum();
    let spec = &fitted.spec;
    let count_split = |split: Split| data.metas().filter(|m| spec.split_of(m) == Some(split)).count();
    let count_windows = |split: Split, stride: f64| {
        data.metas()
            .filter(|m| spec.split_of(m) == Some(split))
            .map(|m| segment_windows(m, stride).map(|w| w.len()).unwrap_or(0))
            .sum::<usize>()
    };
    let results = PipelineResults {
        accuracy: total.accuracy(),
        thresholds: fitted.thresholds,
        training: fitted.training.clone(),
        stage1: fitted.stage1.clone(),
        split: SplitSummary {
            duration_shares: spec.duration_shares,
            balanced: spec.balanced,
            recordings: [count_split(Split::Train), count_split(Split::Val), count_split(Split::Test)],
            windows: [
                count_windows(Split::Train, cfg.train_stride_s),
                count_windows(Split::Val, cfg.eval_stride_s),
                windows.len(),
            ],
        },
        windows,
    };
    PipelineReport {
        config: cfg.clone(),
        protocol: ProtocolConstants::default(),
        results,
    }
}

/// Fit, predict the test split, post-process, score.
pub fn run_pipeline(cfg: &PipelineConfig, data: &PipelineData) -> Result<PipelineReport> {
    let fitted = fit_pipeline(cfg, data)?;
    let outputs = predict_split(cfg, data, &fitted, Split::Test)?;
    if outputs.is_empty() {
        return Err(Error::EmptyInput("test windows"));
    }
    let by_id: BTreeMap<&str, &RecordData> = data.records.iter().map(|r| (r.meta.id.as_str(), r)).collect();
    let mut windows = Vec::with_capacity(outputs.len());
    for w in &outputs {
        let pred = postprocess_outputs(cfg, w.outputs.view(), fitted.thresholds)
            .map_err(|e| e.in_stage("postproc", &w.recording_id))?;
        windows.push(score_window(cfg, by_id[w.recording_id.as_str()], &w.window, &pred)?);
    }
    Ok(assemble_report(cfg, data, &fitted, windows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExertionSubset {
    Spontaneous,
    Both,
}

impl ExertionSubset {
    pub fn includes(self, task: SpeechTask) -> bool {
        self == ExertionSubset::Both || task == SpeechTask::Spontaneous
    }

    pub fn name(self) -> &'static str {
        match self {
            ExertionSubset::Spontaneous => "spontaneous",
            ExertionSubset::Both => "both",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExertionModel {
    /// Recurrent backbone with mean pooling and an ordinal head, trained end to end.
    Recurrent,
    /// Ordinal head on mean-pooled input features.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExertionConfig {
    pub subsets: Vec<ExertionSubset>,
    /// `None` is the acoustic-only column.
    pub embeddings: Vec<Option<FeatureKind>>,
    pub features: Vec<FeatureKind>,
    /// 2 for Low/High, 5 for raw levels.
    pub classes: usize,
    pub model: ExertionModel,
    pub hidden_dim: usize,
    pub layers: usize,
    pub train: TrainConfig,
    pub pooled_fit: CoralFitConfig,
    pub split_fractions: [f64; 3],
    pub split_seed: u64,
    pub model_seed: u64,
    pub train_stride_s: f64,
    pub eval_stride_s: f64,
}

impl Default for ExertionConfig {
    fn default() -> Self {
        Self {
            subsets: vec![ExertionSubset::Spontaneous, ExertionSubset::Both],
            embeddings: vec![None],
            features: vec![FeatureKind::Mfb],
            classes: 2,
            model: ExertionModel::Recurrent,
            hidden_dim: 32,
            layers: 2,
            train: TrainConfig {
                loss: LossConfig::new(LossKind::Coral),
                ..Default::default()
            },
            pooled_fit: CoralFitConfig::default(),
            split_fractions: SPLIT_FRACTIONS,
            split_seed: 0,
            model_seed: 0,
            train_stride_s: TRAIN_STRIDE_SECONDS,
            eval_stride_s: SNIPPET_SECONDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExertionCell {
    pub accuracy: f64,
    pub test_snippets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExertionReport {
    pub config: ExertionConfig,
    pub protocol: ProtocolConstants,
    /// subset -> embedding layer ("none", "emb4", ...) -> acoustic feature -> cell.
    pub results: BTreeMap<String, BTreeMap<String, BTreeMap<String, ExertionCell>>>,
}

/// Snippet-level exertion accuracy over the subset x layer x feature grid.
pub fn run_exertion(cfg: &ExertionConfig, data: &PipelineData) -> Result<ExertionReport> {
    if cfg.classes != 2 && cfg.classes != 5 {
        return Err(Error::Config(format!("exertion classes must be 2 or 5, got {}", cfg.classes)));
    }
    let mut results: BTreeMap<String, BTreeMap<String, BTreeMap<String, ExertionCell>>> = BTreeMap::new();
    for &subset in &cfg.subsets {
        let subset_data = PipelineData {
            records: data
                .records
                .iter()
                .filter(|r| subset.includes(r.meta.task))
                .cloned()
                .collect(),
        };
        let spec = split_by_subject(subset_data.metas(), cfg.split_fractions, cfg.split_seed)
            .map_err(|e| e.in_stage("split", subset.name()))?;
        for &emb in &cfg.embeddings {
            for &feature in &cfg.features {
                let cell = exertion_cell(cfg, &subset_data, &spec, feature, emb)?;
                results
                    .entry(subset.name().to_string())
                    .or_default()
                    .entry(emb.map_or("none", |e| e.name()).to_string())
                    .or_default()
                    .insert(feature.name().to_string(), cell);
            }
        }
    }
    Ok(ExertionReport {
        config: cfg.clone(),
        protocol: ProtocolConstants::default(),
        results,
    })
}

fn exertion_cell(
    cfg: &ExertionConfig,
    data: &PipelineData,
    spec: &SplitSpec,
    feature: FeatureKind,
    emb: Option<FeatureKind>,
) -> Result<ExertionCell> {
    let mut inputs = BTreeMap::new();
    for rec in &data.records {
        let a = rec.feature(feature)?;
        let m = match emb {
            Some(e) => fuse(a, rec.feature(e)?).map_err(|err| err.in_stage("fuse", &rec.meta.id))?,
            None => a.clone(),
        };
        inputs.insert(rec.meta.id.clone(), m);
    }
    let to_samples = |items: Vec<WindowItem<'_>>| -> Result<Vec<Sample>> {
        items
            .iter()
            .map(|it| {
                let label = cluster_exertion(it.record.meta.exertion_level as i64)?;
                let x = inputs[&it.record.meta.id]
                    .slice_frames(it.window.frame_start, it.window.frame_end)?
                    .into_data();
                Ok(Sample::ordinal(x, label.class(cfg.classes)))
            })
            .collect()
    };
    let tr = to_samples(windows_for(data, spec, Split::Train, cfg.train_stride_s)?)?;
    let va = to_samples(windows_for(data, spec, Split::Val, cfg.eval_stride_s)?)?;
    let te = to_samples(windows_for(data, spec, Split::Test, cfg.eval_stride_s)?)?;
    if te.is_empty() {
        return Err(Error::EmptyInput("exertion test snippets"));
    }
    let class_of = |s: &Sample| match s.target {
        crate::models::Target::Ordinal(c) => c,
        crate::models::Target::Frames(_) => unreachable!("ordinal samples"),
    };
    let correct = match cfg.model {
        ExertionModel::Recurrent => {
            let input_dim = te[0].x.ncols();
            let mcfg = ModelConfig {
                input_dim,
                hidden_dim: cfg.hidden_dim,
                layers: cfg.layers,
                bidirectional: true,
                head: HeadKind::Ordinal { classes: cfg.classes },
                conv: None,
            };
            let mut model = SeqModel::new(mcfg, cfg.model_seed)?;
            train(&mut model, &tr, &va, &cfg.train).map_err(|e| e.in_stage("exertion-train", "*"))?;
            let mut n = 0;
            for s in &te {
                let y = model.forward(s.x.view())?;
                let row: Vec<f64> = y.row(0).to_vec();
                n += usize::from(crate::exertion::class_from_probabilities(&row) == class_of(s));
            }
            n
        }
        ExertionModel::Pooled => {
            let pooled = tr.iter().map(|s| pool_features(s.x.view())).collect::<Result<Vec<_>>>()?;
            let classes: Vec<usize> = tr.iter().map(class_of).collect();
            let head = fit_coral_head(&pooled, &classes, cfg.classes, &cfg.pooled_fit)?;
            let mut n = 0;
            for s in &te {
                let p = pool_features(s.x.view())?;
                n += usize::from(coral_predict(&head, p.view())? == class_of(s));
            }
            n
        }
    };
    Ok(ExertionCell {
        accuracy: correct as f64 / te.len() as f64,
        test_snippets: te.len(),
    })
}
