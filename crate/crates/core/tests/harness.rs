use std::path::{Path, PathBuf};
use std::process::Command;

use dope::harness::{
    load_checkpoint, save_checkpoint, write_metrics, HarnessError, MetricRow, Report, RunConfig,
};
use dope::lowshot::SplitName;
use dope::model::{init_params, EncoderConfig};
use serde_json::json;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn dope(args: &[&str], dir: &Path) -> (i32, String, String) {
    let root = dir.to_str().unwrap();
    let mut all: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    all.extend(
        [
            "--config".into(),
            smoke_config().to_str().unwrap().to_string(),
            "--paths.data".into(),
            format!("{root}/data"),
            "--paths.checkpoint".into(),
            format!("{root}/ck"),
            "--paths.report".into(),
            format!("{root}/report"),
            "--viz.output".into(),
            format!("{root}/viz"),
            "--train.epochs".into(),
            "1".into(),
            "--train.steps_per_epoch".into(),
            "4".into(),
            "--eval.episodes".into(),
            "5".into(),
        ]
        .into_iter(),
    );
    let out = Command::new(env!("CARGO_BIN_EXE_dope"))
        .args(&all)
        .env("DOPE_THREADS", "1")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for cmd in ["gen", "train", "eval", "viz"] {
        let (code, out, err) = dope(&[cmd], root);
        assert_eq!(code, 0, "{cmd}: {out}\n{err}");
    }
    assert!(root.join("data/manifest.json").exists());
    let log = std::fs::read_to_string(root.join("ck/train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "l_corr", "l_mask", "lr", "accepted_rate", "seed"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    let row = &report["rows"][0];
    assert_eq!((row["n_way"].as_u64(), row["k_shot"].as_u64()), (Some(2), Some(1)));
    assert!(row["accuracy"].as_f64().unwrap() >= 0.0);
    let csv = std::fs::read_to_string(root.join("report.csv")).unwrap();
    assert!(csv.starts_with("config,split,n_way,k_shot,accuracy,ci95,episodes"));
    assert!(root.join("viz/source.png").exists());

    // Same seed, same weights; only the recorded paths differ.
    let again = tempfile::tempdir().unwrap();
    for cmd in ["gen", "train"] {
        assert_eq!(dope(&[cmd], again.path()).0, 0);
    }
    let enc = RunConfig::default().model;
    let a = load_checkpoint(&root.join("ck"), &enc).unwrap();
    let b = load_checkpoint(&again.path().join("ck"), &enc).unwrap();
    assert_eq!((a.params, a.step), (b.params, b.step));
}

#[test]
fn cli_usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = dope(&["frobnicate"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("usage"));
    let (code, _, err) = dope(&["train", "--train.temperature", "-1"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("τ > 0"), "{err}");
    let (code, _, _) = dope(&["train", "--train.no_such_key", "1"], dir.path());
    assert_eq!(code, 2);
    // Data directory was never generated.
    let (code, _, err) = dope(&["eval"], dir.path());
    assert_eq!(code, 2, "{err}");
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let params = init_params(&cfg.model, 2).unwrap();
    save_checkpoint(dir.path(), &params, &cfg, 17).unwrap();
    let ck = load_checkpoint(dir.path(), &cfg.model).unwrap();
    assert_eq!(ck.params, params);
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.step, 17);
    let other = EncoderConfig {
        out_dim: 32,
        head: vec![64, 128, 128, 32],
        ..EncoderConfig::default()
    };
    let e = load_checkpoint(dir.path(), &other).unwrap_err();
    assert!(e.to_string().contains("version mismatch: model.head"), "{e}");
}

#[test]
fn metrics_files_have_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let row = |k: usize| MetricRow {
        config: "both".into(),
        split: SplitName::Test,
        n_way: 5,
        k_shot: k,
        accuracy: 0.5,
        ci95: 0.01,
        episodes: 500,
        flagged_queries: 0,
        seed: 0,
        wall_clock_s: 1.0,
    };
    let report = Report { config: RunConfig::default(), rows: vec![row(1), row(5)] };
    let (j, c) = write_metrics(&report, &dir.path().join("m")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(j).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["rows"][1]["k_shot"], json!(5));
    assert_eq!(std::fs::read_to_string(c).unwrap().lines().count(), 3);
}

#[test]
fn config_files_reject_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"seed": 1, "trian": {}}"#).unwrap();
    let e = RunConfig::from_file(&p).unwrap_err();
    assert!(matches!(e, HarnessError::Config(_)));
    std::fs::write(&p, r#"{"seed": 1}"#).unwrap();
    let c = RunConfig::from_file(&p).unwrap().resolve(&[], None).unwrap();
    assert_eq!((c.train.seed, c.dataset.seed), (1, 1));
}

#[test]
fn ablation_variants_resolve() {
    let cfg = RunConfig::default();
    for v in &cfg.ablation {
        let c = cfg.with_variant(v).unwrap();
        assert_eq!(c.objective, v.objective);
    }
    let names: Vec<&str> = cfg.ablation.iter().map(|v| v.name.as_str()).collect();
    for n in ["both", "second_view_only/single_view", "no_background_remove", "no_mask_prediction", "global_baseline"] {
        assert!(names.contains(&n), "{n}");
    }
}
