use std::path::{Path, PathBuf};

use astra_core::export::{
    export_bundle, run_pipeline, stage_path, PipelineConfig, StageStatus, BUNDLE_FILE, BUNDLE_SCHEMA, METRICS_FILE,
    STAGES,
};
use astra_core::synthetic::{planted_corpus, SyntheticSpec};
use astra_core::{AstraError, ExplorerBundle};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PipelineConfig,
}

fn fixture(spec: &SyntheticSpec, extra_toml: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let s = planted_corpus(spec).unwrap();
    std::fs::write(root.join("corpus.json"), s.corpus.to_json().unwrap()).unwrap();
    s.table.save(root.join("tokens.vec")).unwrap();
    let text = format!("seed = 5\ncorpus = \"corpus.json\"\nembeddings = \"tokens.vec\"\n{extra_toml}");
    std::fs::write(root.join("astra.toml"), &text).unwrap();
    let config = PipelineConfig::load(root.join("astra.toml")).unwrap();
    Fixture {
        _dir: dir,
        root,
        config,
    }
}

fn small() -> Fixture {
    fixture(
        &SyntheticSpec::default(),
        "[manifold]\nn_epochs = 200\n[topics]\nk_max = 8\n",
    )
}

fn read_bundle(run: &Path) -> (String, ExplorerBundle) {
    let text = std::fs::read_to_string(run.join(BUNDLE_FILE)).unwrap();
    let bundle = serde_json::from_str(&text).unwrap();
    (text, bundle)
}

#[test]
fn four_institution_run_fills_every_field() {
    let spec = SyntheticSpec {
        groups: 2,
        per_group: 2,
        ..Default::default()
    };
    let f = fixture(&spec, "[manifold]\nn_neighbors = 3\n");
    let run = f.root.join("run");
    let report = run_pipeline(&f.config, &run).unwrap();
    assert!(report.stages.iter().all(|(_, s)| *s == StageStatus::Computed));
    assert!(run.join(METRICS_FILE).exists());

    let (text, bundle) = read_bundle(&run);
    let k = bundle.run_metadata.k_topics;
    assert_eq!(bundle.institutions.len(), 4);
    for inst in &bundle.institutions {
        assert!(inst.coords2d.iter().all(|v| v.is_finite()));
        assert_eq!(inst.topic_weights.len(), k);
        assert_eq!(inst.top_similar.len(), 3);
    }
    assert_eq!(bundle.topics.len(), k);

    let schema: serde_json::Value = serde_json::from_str(BUNDLE_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn schema_rejects_broken_bundles() {
    let f = small();
    let run = f.root.join("run");
    run_pipeline(&f.config, &run).unwrap();
    let (text, _) = read_bundle(&run);
    let schema: serde_json::Value = serde_json::from_str(BUNDLE_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(validator.is_valid(&doc));
    doc["institutions"][0]["coords2d"] = serde_json::json!([1.0]);
    assert!(!validator.is_valid(&doc));
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["institutions"][0]["axis_texts"]
        .as_object_mut()
        .unwrap()
        .remove("ecosystem_function");
    assert!(!validator.is_valid(&doc));
}

#[test]
fn same_seed_gives_byte_identical_bundles() {
    let f = small();
    run_pipeline(&f.config, &f.root.join("a")).unwrap();
    run_pipeline(&f.config, &f.root.join("b")).unwrap();
    let (a, bundle) = read_bundle(&f.root.join("a"));
    let (b, _) = read_bundle(&f.root.join("b"));
    assert!(a == b, "bundles differ");
    bundle.validate().unwrap();
    assert_eq!(bundle.run_metadata.config_hash, f.config.config_hash());
    assert_eq!(bundle.run_metadata.seed, 5);
}

#[test]
fn rerun_after_sweep_reuses_earlier_stages() {
    let f = small();
    let run = f.root.join("run");
    let first = run_pipeline(&f.config, &run).unwrap();
    let (before, _) = read_bundle(&run);

    // Simulate an interruption right after the sweep.
    let cut = STAGES.iter().position(|&s| s == "sweep").unwrap();
    for stage in &STAGES[cut + 1..] {
        let _ = std::fs::remove_file(stage_path(&run, stage));
    }
    std::fs::remove_file(run.join(BUNDLE_FILE)).unwrap();

    let second = run_pipeline(&f.config, &run).unwrap();
    for (i, (stage, status)) in second.stages.iter().enumerate() {
        let want = if i <= cut {
            StageStatus::Cached
        } else {
            StageStatus::Computed
        };
        assert_eq!(*status, want, "{stage}");
    }
    assert_eq!(first.config_hash, second.config_hash);
    let (after, _) = read_bundle(&run);
    assert_eq!(before, after);

    let third = run_pipeline(&f.config, &run).unwrap();
    assert!(third.stages.iter().all(|(_, s)| *s == StageStatus::Cached));
}

#[test]
fn changed_topic_settings_only_rerun_downstream() {
    let f = small();
    let run = f.root.join("run");
    run_pipeline(&f.config, &run).unwrap();
    let mut cfg = f.config.clone();
    cfg.topics.k = astra_core::export::TopicCount::Fixed(3);
    let report = run_pipeline(&cfg, &run).unwrap();
    assert_eq!(report.status("sweep"), Some(StageStatus::Cached));
    assert_eq!(report.status("topics"), Some(StageStatus::Computed));
    let (_, bundle) = read_bundle(&run);
    assert_eq!(bundle.run_metadata.k_topics, 3);
}

#[test]
fn export_names_the_missing_stage() {
    let f = small();
    let run = f.root.join("run");
    run_pipeline(&f.config, &run).unwrap();
    std::fs::remove_file(stage_path(&run, "topics")).unwrap();
    let err = export_bundle(&run).unwrap_err();
    assert!(matches!(err, AstraError::MissingStage(ref s) if s == "topics"));
    assert_eq!(err.to_string(), "missing stage: topics");
}

#[test]
fn stage_errors_carry_the_stage_name() {
    let f = fixture(&SyntheticSpec::default(), "[manifold]\nn_neighbors = 500\n");
    let err = run_pipeline(&f.config, &f.root.join("run")).unwrap_err();
    assert!(
        matches!(err, AstraError::Stage { ref stage, .. } if stage == "manifold4d"),
        "{err}"
    );
}
