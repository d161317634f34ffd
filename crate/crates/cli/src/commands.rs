//! One function per subcommand. Each reads its inputs from disk, writes its
//! artifacts, and returns a one-line summary for the terminal.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pausebench::annotation::{corpus_stats, majority_vote, AnnotationTrack, MergedFile};
use pausebench::dataprep::{segment_windows, split_by_subject, synth_corpus, CorpusConfig, Split, SplitSpec, Window};
use pausebench::features::{compute_mfb, compute_mfcc, normalize_audio, AudioClip, FeatureKind};
use pausebench::labels::FrameLabelSeq;
use pausebench::models::{load_checkpoint, save_checkpoint, SeqModel, TrainOutcome};
use pausebench::pipeline::{
    assemble_report, fit_pipeline, postprocess_outputs, predict_split, run_exertion, run_pipeline, score_window,
    ExertionConfig, ExertionModel, FittedPipeline, PipelineConfig, PipelineData, Setup, Stage1Mode, Stage1Summary, Task,
};
use pausebench::DatasetManifest;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes to `out`, or prints to stdout when no path is given.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
            Ok(())
        }
    }
}

fn feature_kind(s: &str) -> Result<FeatureKind> {
    Ok(s.parse::<FeatureKind>()?)
}

pub fn synth(a: &SynthArgs) -> Result<String> {
    let mut cfg = CorpusConfig {
        n_recordings: a.n_recordings,
        n_subjects: a.n_subjects,
        frames_range: (a.min_frames, a.max_frames),
        embeddings: a.embeddings.iter().map(|s| feature_kind(s)).collect::<Result<_>>()?,
        with_audio: a.audio,
        ..Default::default()
    };
    if let Some(m) = a.margin {
        cfg.synth.margin = m;
    }
    let corpus = synth_corpus(&cfg, a.seed)?;
    let manifest = corpus.write(&a.out)?;
    Ok(format!(
        "wrote {} recordings to {}",
        manifest.records.len(),
        a.out.join("manifest.json").display()
    ))
}

pub fn features(a: &FeaturesArgs) -> Result<String> {
    let kind = feature_kind(&a.kind)?;
    if !kind.is_acoustic() {
        return Err(CliError::Usage(format!("{kind} is not an acoustic feature")));
    }
    let mut manifest = DatasetManifest::load(&a.manifest)?;
    let root = manifest.root.clone();
    let computed: Vec<Option<PathBuf>> = manifest
        .records
        .par_iter()
        .map(|rec| -> Result<Option<PathBuf>> {
            let Some(audio) = &rec.audio else {
                return Ok(None);
            };
            let id = rec.id();
            let clip = AudioClip::read_wav(&manifest.resolve(audio)).map_err(|e| e.in_stage("features", id))?;
            let clip = normalize_audio(&clip.to_model_rate())?.clip;
            let m = match kind {
                FeatureKind::Mfcc => compute_mfcc(&clip),
                _ => compute_mfb(&clip),
            }
            .map_err(|e| e.in_stage("features", id))?;
            let rel = Path::new("features").join(format!("{id}.{kind}.f32"));
            let full = root.join(&rel);
            if let Some(dir) = full.parent() {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            m.save(&full)?;
            Ok(Some(rel))
        })
        .collect::<Result<_>>()?;
    let mut written = 0;
    for (rec, path) in manifest.records.iter_mut().zip(computed) {
        if let Some(p) = path {
            rec.features.insert(kind.name().to_string(), p);
            written += 1;
        }
    }
    let out = a.out_manifest.as_deref().unwrap_or(&a.manifest);
    manifest.save(out)?;
    Ok(format!("{written} {kind} matrices; manifest {}", out.display()))
}

pub fn segment(a: &SegmentArgs) -> Result<String> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let mut windows: Vec<Window> = Vec::new();
    for meta in manifest.metas() {
        windows.extend(segment_windows(meta, a.stride)?);
    }
    emit(a.out.as_deref(), &windows)?;
    Ok(format!("{} windows at {} s stride", windows.len(), a.stride))
}

fn fractions(v: &[f64]) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(v).map_err(|_| CliError::Usage(format!("expected 3 split fractions, got {}", v.len())))
}

pub fn split(a: &SplitArgs) -> Result<String> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let spec = split_by_subject(manifest.metas(), fractions(&a.fractions)?, a.seed)?;
    emit(a.out.as_deref(), &spec)?;
    let shares = spec.duration_shares.map(|s| format!("{:.3}", s)).join("/");
    Ok(format!("duration shares {shares}, balanced: {}", spec.balanced))
}

/// Resolves the pipeline configuration: file, then flag overrides.
pub fn pipeline_config(p: &PipelineArgs) -> Result<PipelineConfig> {
    let setup = p.setup.map(Setup::try_from).transpose()?;
    let task = p.task.map(|t| match t {
        TaskArg::Classification => Task::Classification,
        TaskArg::Regression => Task::Regression,
    });
    let mut cfg = match &p.config {
        Some(path) => {
            let mut cfg: PipelineConfig = read_json(path)?;
            if setup.is_some() || task.is_some() {
                let fresh = PipelineConfig::new(setup.unwrap_or(cfg.setup), task.unwrap_or(cfg.task));
                cfg.setup = fresh.setup;
                cfg.task = fresh.task;
                cfg.embedding = cfg.embedding.or(fresh.embedding);
                cfg.train.loss = fresh.train.loss;
            }
            cfg
        }
        None => PipelineConfig::new(setup.unwrap_or(Setup::Single), task.unwrap_or(Task::Classification)),
    };
    if let Some(f) = &p.feature {
        cfg.feature = feature_kind(f)?;
    }
    if let Some(e) = &p.embedding {
        cfg.embedding = Some(feature_kind(e)?);
    }
    if let Some(h) = p.hidden_dim {
        cfg.hidden_dim = h;
    }
    if let Some(n) = p.epochs {
        cfg.train.max_epochs = n;
        cfg.stage1.train.max_epochs = n;
    }
    if let Some(lr) = p.lr {
        cfg.train.learning_rate = lr;
        cfg.stage1.train.learning_rate = lr;
    }
    if let Some(b) = p.batch_size {
        cfg.train.batch_size = b;
        cfg.stage1.train.batch_size = b;
    }
    if let Some(s) = p.seed {
        cfg.split_seed = s;
        cfg.model_seed = s;
        cfg.train.seed = s;
        cfg.stage1.train.seed = s;
    }
    if let Some(t) = p.threads {
        cfg.train.threads = t;
        cfg.stage1.train.threads = t;
    }
    if let Some(m) = p.stage1 {
        cfg.stage1.mode = match m {
            Stage1Arg::Trained => Stage1Mode::Trained,
            Stage1Arg::Identity => Stage1Mode::Identity,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(manifest: &Path, cfg: &PipelineConfig) -> Result<PipelineData> {
    let manifest = DatasetManifest::load(manifest)?;
    Ok(PipelineData::load(&manifest, &cfg.required_features())?)
}

/// Everything `train` writes besides the checkpoints.
#[derive(Debug, Serialize, Deserialize)]
pub struct FittedFile {
    pub config: PipelineConfig,
    pub split: SplitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<[f64; 3]>,
    pub training: TrainOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Stage1Summary>,
}

const MODEL_FILE: &str = "model.ckpt";
const DETECTOR_FILE: &str = "stage1.ckpt";
const FITTED_FILE: &str = "fitted.json";

pub fn save_fitted(dir: &Path, cfg: &PipelineConfig, fitted: &FittedPipeline) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let extra = serde_json::json!({ "setup": cfg.setup, "task": cfg.task });
    save_checkpoint(&dir.join(MODEL_FILE), &fitted.model, cfg.model_seed, extra.clone())?;
    if let Some(det) = &fitted.detector {
        save_checkpoint(&dir.join(DETECTOR_FILE), det, cfg.model_seed, extra)?;
    }
    write_json(
        &dir.join(FITTED_FILE),
        &FittedFile {
            config: cfg.clone(),
            split: fitted.spec.clone(),
            thresholds: fitted.thresholds,
            training: fitted.training.clone(),
            stage1: fitted.stage1.clone(),
        },
    )
}

pub fn load_fitted(dir: &Path) -> Result<(PipelineConfig, FittedPipeline)> {
    let f: FittedFile = read_json(&dir.join(FITTED_FILE))?;
    let (model, _) = load_checkpoint(&dir.join(MODEL_FILE))?;
    let det_path = dir.join(DETECTOR_FILE);
    let detector: Option<SeqModel> = if det_path.exists() {
        Some(load_checkpoint(&det_path)?.0)
    } else {
        None
    };
    let fitted = FittedPipeline {
        spec: f.split,
        model,
        detector,
        training: f.training,
        stage1: f.stage1,
        thresholds: f.thresholds,
    };
    Ok((f.config, fitted))
}

pub fn train(a: &TrainArgs) -> Result<String> {
    let cfg = pipeline_config(&a.pipeline)?;
    let data = load_data(&a.manifest, &cfg)?;
    let fitted = fit_pipeline(&cfg, &data)?;
    save_fitted(&a.out, &cfg, &fitted)?;
    Ok(format!(
        "best epoch {} (val loss {:.4}); model in {}",
        fitted.training.best_epoch,
        fitted.training.best_val_loss,
        a.out.display()
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub recording_id: String,
    pub window: Window,
    /// Frame-wise model outputs (4 logits or 1 value per frame).
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WindowLabels {
    pub recording_id: String,
    pub window: Window,
    /// Post-processed label codes for the unmasked frames.
    pub labels: Vec<u8>,
}

pub fn predict(a: &PredictArgs) -> Result<String> {
    let (cfg, fitted) = load_fitted(&a.model)?;
    let split: Split = a.split.parse()?;
    let data = load_data(&a.manifest, &cfg)?;
    let preds: Vec<WindowPrediction> = predict_split(&cfg, &data, &fitted, split)?
        .into_iter()
        .map(|w| WindowPrediction {
            recording_id: w.recording_id,
            window: w.window,
            outputs: w.outputs.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
        .collect();
    write_json(&a.out, &preds)?;
    Ok(format!("{} {split} windows predicted", preds.len()))
}

pub fn postproc(a: &PostprocArgs) -> Result<String> {
    let (cfg, fitted) = load_fitted(&a.model)?;
    let preds: Vec<WindowPrediction> = read_json(&a.predictions)?;
    let labels = preds
        .iter()
        .map(|p| {
            let cols = p.outputs.first().map_or(0, Vec::len);
            let flat: Vec<f64> = p.outputs.iter().flatten().copied().collect();
            let y = ndarray::Array2::from_shape_vec((p.outputs.len(), cols), flat)
                .map_err(|e| CliError::Usage(format!("{}: ragged outputs: {e}", p.recording_id)))?;
            let seq = postprocess_outputs(&cfg, y.view(), fitted.thresholds)
                .map_err(|e| e.in_stage("postproc", &p.recording_id))?;
            Ok(WindowLabels {
                recording_id: p.recording_id.clone(),
                window: p.window.clone(),
                labels: seq.codes(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out, &labels)?;
    Ok(format!("{} windows post-processed", labels.len()))
}

pub fn eval(a: &EvalArgs) -> Result<String> {
    let (cfg, fitted) = load_fitted(&a.model)?;
    let data = load_data(&a.manifest, &cfg)?;
    let labels: Vec<WindowLabels> = read_json(&a.labels)?;
    let by_id: BTreeMap<&str, _> = data.records.iter().map(|r| (r.meta.id.as_str(), r)).collect();
    let mut windows = Vec::with_capacity(labels.len());
    for w in &labels {
        let rec = by_id
            .get(w.recording_id.as_str())
            .ok_or_else(|| pausebench::Error::UnknownRecording(w.recording_id.clone()))?;
        let codes: Vec<i64> = w.labels.iter().map(|&c| i64::from(c)).collect();
        let seq = FrameLabelSeq::from_codes(&codes)?;
        windows.push(score_window(&cfg, rec, &w.window, &seq)?);
    }
    let report = assemble_report(&cfg, &data, &fitted, windows);
    report.save(&a.out)?;
    Ok(summary(&report))
}

fn summary(report: &pausebench::pipeline::PipelineReport) -> String {
    let acc = &report.results.accuracy;
    let per: Vec<String> = acc.per_type.iter().map(|(k, v)| format!("{k} {v}")).collect();
    format!("overall {} ({})", acc.overall, per.join(", "))
}

pub fn run(a: &RunArgs) -> Result<String> {
    let cfg = pipeline_config(&a.pipeline)?;
    let data = load_data(&a.manifest, &cfg)?;
    let report = run_pipeline(&cfg, &data)?;
    report.save(&a.out)?;
    let csv = a.out.with_extension("windows.csv");
    std::fs::write(&csv, report.windows_csv()).map_err(|e| CliError::io(&csv, e))?;
    Ok(summary(&report))
}

pub fn exertion(a: &ExertionArgs) -> Result<String> {
    let mut cfg: ExertionConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExertionConfig::default(),
    };
    if let Some(k) = a.classes {
        cfg.classes = k;
    }
    if let Some(m) = a.model {
        cfg.model = match m {
            ExertionModelArg::Recurrent => ExertionModel::Recurrent,
            ExertionModelArg::Pooled => ExertionModel::Pooled,
        };
    }
    if !a.layers.is_empty() {
        cfg.embeddings = a
            .layers
            .iter()
            .map(|l| if l == "none" { Ok(None) } else { feature_kind(l).map(Some) })
            .collect::<Result<_>>()?;
    }
    if let Some(n) = a.epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(s) = a.seed {
        cfg.split_seed = s;
        cfg.model_seed = s;
        cfg.train.seed = s;
    }
    let mut kinds: Vec<FeatureKind> = cfg.features.clone();
    kinds.extend(cfg.embeddings.iter().flatten());
    kinds.sort();
    kinds.dedup();
    let manifest = DatasetManifest::load(&a.manifest)?;
    let data = PipelineData::load(&manifest, &kinds)?;
    let report = run_exertion(&cfg, &data)?;
    write_json(&a.out, &report)?;
    let cells: Vec<String> = report
        .results
        .iter()
        .flat_map(|(subset, layers)| {
            layers.iter().flat_map(move |(layer, feats)| {
                feats
                    .iter()
                    .map(move |(f, c)| format!("{subset}/{layer}/{f} {:.3}", c.accuracy))
            })
        })
        .collect();
    Ok(cells.join(", "))
}

pub fn stats(a: &StatsArgs) -> Result<String> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let mut labels = BTreeMap::new();
    for rec in &manifest.records {
        if let Some(p) = &rec.labels {
            labels.insert(rec.id().to_string(), FrameLabelSeq::load(&manifest.resolve(p))?);
        }
    }
    let split: Option<SplitSpec> = a.split.as_deref().map(read_json).transpose()?;
    let stats = corpus_stats(&manifest, &labels, split.as_ref());
    emit(a.out.as_deref(), &stats)?;
    Ok(format!(
        "{} recordings in {} group(s), {} without labels",
        manifest.records.len(),
        stats.groups.len(),
        stats.missing_labels.len()
    ))
}

pub fn merge(a: &MergeArgs) -> Result<String> {
    let tracks = a
        .tracks
        .iter()
        .map(|p| Ok(AnnotationTrack::load(&a.recording, p)?))
        .collect::<Result<Vec<_>>>()?;
    let merged = MergedFile::from_seq(&majority_vote(&tracks)?);
    emit(a.out.as_deref(), &merged)?;
    Ok(format!("merged {} tracks over {} frames", tracks.len(), merged.labels.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn parse(args: &[&str]) -> PipelineArgs {
        let mut full = vec!["pausebench", "run", "--manifest", "m.json", "--out", "r.json"];
        full.extend_from_slice(args);
        match crate::args::Cli::parse_from(full).command {
            Command::Run(r) => r.pipeline,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_follow_protocol() {
        let cfg = pipeline_config(&parse(&[])).unwrap();
        assert_eq!(cfg, PipelineConfig::new(Setup::Single, Task::Classification));
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.learning_rate, 1e-4);
    }

    #[test]
    fn setup3_regression_uses_daf() {
        let cfg = pipeline_config(&parse(&["--setup", "3", "--task", "regression"])).unwrap();
        assert_eq!(cfg.train.loss.loss, pausebench::losses::LossKind::Daf);
        assert_eq!(cfg.embedding, Some(FeatureKind::Emb6));
    }

    #[test]
    fn seed_reaches_every_stage() {
        let cfg = pipeline_config(&parse(&["--seed", "9"])).unwrap();
        assert_eq!((cfg.split_seed, cfg.model_seed, cfg.train.seed, cfg.stage1.train.seed), (9, 9, 9, 9));
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut base = PipelineConfig::new(Setup::Fused, Task::Classification);
        base.hidden_dim = 17;
        write_json(&path, &base).unwrap();
        let cfg = pipeline_config(&parse(&["--config", path.to_str().unwrap(), "--epochs", "3"])).unwrap();
        assert_eq!((cfg.setup, cfg.hidden_dim, cfg.train.max_epochs), (Setup::Fused, 17, 3));
    }

    #[test]
    fn bad_fraction_count_is_a_usage_error() {
        assert!(matches!(fractions(&[0.5, 0.5]), Err(CliError::Usage(_))));
    }
}
