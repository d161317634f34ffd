mod support;

use pausebench::features::FeatureKind;
use pausebench::pipeline::{
    run_exertion, run_pipeline, ExertionConfig, ExertionModel, Setup, Stage1Mode, Task,
};
use pausebench::protocol::FUSED_DIMS;
use support::checks::{small_corpus, small_pipeline_config};

#[test]
fn gated_with_unit_weights_equals_fused() {
    let v = support::checks::pipeline_equivalence();
    assert!(v.passed, "{}", v.detail);
    assert_eq!(FUSED_DIMS, 808);
}

#[test]
fn all_setups_run_on_the_same_recordings() {
    let data = small_corpus(11);
    for setup in [Setup::Single, Setup::Fused, Setup::Gated] {
        for task in [Task::Classification, Task::Regression] {
            let mut cfg = small_pipeline_config(setup);
            cfg.task = task;
            cfg.train.loss = pausebench::pipeline::PipelineConfig::new(setup, task).train.loss;
            cfg.postproc.sweep_step = 0.5;
            let report = run_pipeline(&cfg, &data).unwrap();
            assert_eq!(report.results.split.recordings.iter().sum::<usize>(), data.records.len());
            assert_eq!(report.results.thresholds.is_some(), task == Task::Regression);
            assert!(report.results.accuracy.overall.value().is_some());
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let data = small_corpus(5);
    let cfg = small_pipeline_config(Setup::Single);
    let a = serde_json::to_string(&run_pipeline(&cfg, &data).unwrap()).unwrap();
    let b = serde_json::to_string(&run_pipeline(&cfg, &data).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trained_stage1_separates_pauses() {
    let data = small_corpus(7);
    let mut cfg = small_pipeline_config(Setup::Gated);
    cfg.stage1.mode = Stage1Mode::Trained;
    cfg.stage1.hidden_dim = 8;
    cfg.stage1.train.learning_rate = 1e-2;
    cfg.stage1.train.max_epochs = 4;
    let report = run_pipeline(&cfg, &data).unwrap();
    let auc = report.results.stage1.unwrap().val_auc.unwrap();
    assert!(auc >= 0.95, "stage-1 auc {auc}");
}

#[test]
fn exertion_grid_is_filled() {
    let data = small_corpus(9);
    let cfg = ExertionConfig {
        embeddings: vec![None, Some(FeatureKind::Emb6)],
        model: ExertionModel::Pooled,
        ..Default::default()
    };
    let report = run_exertion(&cfg, &data).unwrap();
    for subset in ["spontaneous", "both"] {
        for layer in ["none", "emb6"] {
            let cell = &report.results[subset][layer]["mfb"];
            assert!((0.0..=1.0).contains(&cell.accuracy));
        }
    }
}

#[test]
fn report_round_trips_through_json() {
    let report = run_pipeline(&small_pipeline_config(Setup::Single), &small_corpus(2)).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    let back: pausebench::pipeline::PipelineReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert!(json.contains("\"setup\":1"));
}
