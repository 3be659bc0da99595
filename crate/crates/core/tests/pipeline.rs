use std::fs;
use std::path::Path;

use ipred::pipeline::{PipelineConfig, Pipeline, PipelineError, RunOptions, Stage, StageOutcome};
use serde_json::{json, Value};

fn tiny(gate: bool) -> Value {
    json!({
        "seed": 7,
        "precision": "f32",
        "paths": { "data": "data", "checkpoints": "ckpt", "reports": "reports" },
        "source": { "kind": "synth", "flows": 40, "attack_fraction": 0.5 },
        "features": { "var_threshold": 0.25, "corr_threshold": 0.9, "window": 4 },
        "split": { "train": 0.8, "val": 0.1, "test": 0.1 },
        "tokenizer": { "vocab_size": 400 },
        "gpt": { "layers": 1, "width": 16, "heads": 2, "max_positions": 128, "dropout": 0.0, "context_packets": 1 },
        "gpt_train": { "max_epochs": 2, "patience": 1, "batch_size": 16, "lr": 0.003, "clip_norm": 1.0 },
        "bert": { "layers": 1, "width": 16, "heads": 2, "max_positions": 128, "mask_rate": 0.15, "dropout": 0.0 },
        "bert_train": { "max_epochs": 2, "patience": 1, "batch_size": 16, "lr": 0.001, "clip_norm": 1.0 },
        "mlm": { "epochs": 1, "lr": 0.002 },
        "pairs": { "neg_ratio": 0.5 },
        "lstm": { "hidden": 8, "dropout": 0.2, "max_epochs": 3, "patience": 3, "batch_size": 32, "lr": 0.01, "modes": ["binary"] },
        "deploy": {
            "gate": gate,
            "policy": { "mode": { "mode": "greedy" }, "max_new_tokens": 24 },
            "classifier": "binary",
            "stream": { "kind": "synth", "flows": 6, "attack_fraction": 0.5, "seed_offset": 1 },
            "chunk_size": 16
        },
        "report": { "plots": true }
    })
}

fn write_config(dir: &Path, v: &Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

#[test]
fn dev_then_deploy_with_caching_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::load(&write_config(dir.path(), &tiny(true))).unwrap();

    let first = p.run_dev(RunOptions::default()).unwrap();
    assert_eq!(first.len(), Stage::ALL.len());
    assert!(first.iter().all(|(_, o)| *o == StageOutcome::Ran), "{first:?}");
    assert!(p.manifest_path().exists());

    let second = p.run_dev(RunOptions::default()).unwrap();
    assert!(second.iter().all(|(_, o)| *o == StageOutcome::Cached), "{second:?}");
    assert_eq!(p.run_stage(Stage::Features, RunOptions { force: true }).unwrap(), StageOutcome::Ran);

    let report = p.run_deploy().unwrap();
    assert!(report.conserved);
    assert_eq!(report.counts.total(), report.packets);
    assert!(report.gate);
    let again = p.run_deploy().unwrap();
    assert_eq!(again, report);

    // a missing output makes its stage run again
    fs::remove_file(dir.path().join("data/oracle.json")).unwrap();
    assert_eq!(p.run_stage(Stage::Ingest, RunOptions::default()).unwrap(), StageOutcome::Ran);

    // a changed output is reported, not silently replaced
    let vocab = dir.path().join("data/vocab.json");
    let mut text = fs::read_to_string(&vocab).unwrap();
    text.push(' ');
    fs::write(&vocab, &text).unwrap();
    let err = p.run_stage(Stage::Tokenize, RunOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::StageFailure { ref stage, .. } if stage == "tokenize"), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert_eq!(fs::read_to_string(&vocab).unwrap(), text);
    assert_eq!(p.run_stage(Stage::Tokenize, RunOptions { force: true }).unwrap(), StageOutcome::Ran);
}

#[test]
fn gate_off_rejects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::load(&write_config(dir.path(), &tiny(false))).unwrap();
    p.run_dev(RunOptions::default()).unwrap();
    let report = p.run_deploy().unwrap();
    assert!(!report.gate);
    assert_eq!(report.counts.rejected_by_evaluator, 0);
    assert!(report.conserved);
}

#[test]
fn disabled_stages_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(true);
    cfg["stages"] = json!({ "tokenize": false, "train_gpt": false, "build_pairs": false, "train_bert": false, "train_lstm": false, "evaluate": false });
    let p = Pipeline::load(&write_config(dir.path(), &cfg)).unwrap();
    let out = p.run_dev(RunOptions::default()).unwrap();
    assert_eq!(out[0], (Stage::Ingest, StageOutcome::Ran));
    assert!(out[2..].iter().all(|(_, o)| *o == StageOutcome::Disabled));
    assert!(dir.path().join("data/features.json").exists());
}

#[test]
fn deploy_without_checkpoints_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::load(&write_config(dir.path(), &tiny(true))).unwrap();
    let err = p.run_deploy().unwrap_err();
    assert!(matches!(err, PipelineError::MissingCheckpoint(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{ not json").unwrap();
    assert_eq!(Pipeline::load(&path).unwrap_err().exit_code(), 2);
    assert_eq!(Pipeline::load(&dir.path().join("absent.json")).unwrap_err().exit_code(), 2);

    for (key, bad) in [("/gpt/heads", json!(3)), ("/pairs/neg_ratio", json!(1.0)), ("/tokenizer/vocab_size", json!(10))] {
        let mut cfg = tiny(true);
        *cfg.pointer_mut(key).unwrap() = bad;
        let err = Pipeline::load(&write_config(dir.path(), &cfg)).unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)), "{key}: {err}");
    }
}

#[test]
fn paths_do_not_enter_the_config_hash() {
    let a: PipelineConfig = serde_json::from_value(tiny(true)).unwrap();
    let mut v = tiny(true);
    v["paths"]["reports"] = json!("elsewhere");
    let b: PipelineConfig = serde_json::from_value(v).unwrap();
    assert_eq!(a.hash(), b.hash());
    let mut v = tiny(true);
    v["seed"] = json!(8);
    let c: PipelineConfig = serde_json::from_value(v).unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn data_override_moves_only_the_data_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: PipelineConfig = serde_json::from_value(tiny(true)).unwrap();
    let p = Pipeline::new(cfg, dir.path(), Some(dir.path().join("other"))).unwrap();
    assert_eq!(p.ws.data, dir.path().join("other"));
    assert_eq!(p.ws.checkpoints, dir.path().join("ckpt"));
    assert_eq!(p.ws.reports, dir.path().join("reports"));
}
