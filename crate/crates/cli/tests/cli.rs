use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nadet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nadet"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("run nadet")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nadet(dir, args);
    assert!(
        out.status.success(),
        "nadet {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &str = r#"
seed = 3

[ingest]
queries_per_topic = 30

[train]
epochs = 8
"#;

fn small_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("nadet.toml"), SMALL).unwrap();
    dir
}

fn version(dir: &Path, stage: &str, v: u32) -> PathBuf {
    dir.join("runs").join(stage).join(format!("v{v:04}"))
}

#[test]
fn synthetic_pipeline_runs_end_to_end() {
    let ws = small_workspace();
    let d = ws.path();
    for args in [
        vec!["ingest"],
        vec!["vocab"],
        vec!["inject", "--generator", "template"],
        vec!["split"],
        vec!["pairs"],
        vec!["train"],
        vec!["detect"],
        vec!["eval"],
        vec!["audit"],
        vec!["report"],
    ] {
        ok(d, &args);
    }
    let metrics: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(d.join("runs/eval/fixed/encoder/v0001/metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics["test_set"], "fixed");
    assert!(d.join("runs/train/fixed/v0001/best/weights.bin").exists());
    assert!(d.join("runs/eval/fixed/encoder/v0001/annotation/sheet.jsonl").exists());
    let report = std::fs::read_to_string(d.join("runs/report/v0001/report.md")).unwrap();
    assert!(report.contains("| fixed | encoder |"), "{report}");
}

#[test]
fn template_injection_is_byte_identical_across_runs() {
    let ws = small_workspace();
    let d = ws.path();
    ok(d, &["ingest"]);
    ok(d, &["vocab"]);
    ok(d, &["inject", "--generator", "template", "--seed", "7"]);
    ok(d, &["inject", "--generator", "template", "--seed", "7"]);
    let first = std::fs::read(version(d, "inject", 1).join("ad_records.jsonl")).unwrap();
    let second = std::fs::read(version(d, "inject", 2).join("ad_records.jsonl")).unwrap();
    assert!(!first.is_empty());
    assert_eq!(first, second);
}

#[test]
fn reruns_write_new_versions_and_manifests() {
    let ws = small_workspace();
    let d = ws.path();
    ok(d, &["ingest"]);
    let v1 = std::fs::read(version(d, "ingest", 1).join("responses.jsonl")).unwrap();
    ok(d, &["ingest", "--seed", "4"]);
    assert_eq!(std::fs::read(version(d, "ingest", 1).join("responses.jsonl")).unwrap(), v1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(version(d, "ingest", 2).join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["version"], 2);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"]["responses.jsonl"].is_string());

    ok(d, &["vocab"]);
    ok(d, &["inject"]);
    let inject: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(version(d, "inject", 1).join("run.json")).unwrap()).unwrap();
    assert!(inject["inputs"]["ingest/v0002/responses.jsonl"].is_string(), "{inject}");
}

#[test]
fn eval_without_training_reports_missing_checkpoint() {
    let ws = small_workspace();
    let d = ws.path();
    for s in ["ingest", "vocab", "inject", "split"] {
        ok(d, &[s]);
    }
    let out = nadet(d, &["eval"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing checkpoint"), "{}", stderr(&out));
}

#[test]
fn missing_upstream_stage_is_a_validation_failure() {
    let ws = small_workspace();
    let out = nadet(ws.path(), &["split"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nadet ingest"), "{}", stderr(&out));
}

fn with_variants(dir: &Path, n: usize) {
    let mut cfg = SMALL.to_string();
    for i in 0..n {
        cfg.push_str(&format!("\n[[llm.variants]]\nid = \"v{i}\"\nprovider = \"static\"\noutput = \"none\"\n"));
    }
    std::fs::write(dir.join("nadet.toml"), cfg).unwrap();
}

#[test]
fn vote_needs_three_variants() {
    let ws = small_workspace();
    with_variants(ws.path(), 2);
    let out = nadet(ws.path(), &["detect", "--detector", "vote"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("exactly 3"), "{}", stderr(&out));
}

#[test]
fn vote_with_three_variants_writes_majority_results() {
    let ws = small_workspace();
    let d = ws.path();
    with_variants(d, 3);
    for s in ["ingest", "vocab", "inject", "split"] {
        ok(d, &[s]);
    }
    ok(d, &["detect", "--detector", "vote"]);
    ok(d, &["eval", "--detector", "vote"]);
    let dir = d.join("runs/detect/fixed/majority3/v0001");
    assert!(dir.join("detections-v0.jsonl").exists());
    assert!(dir.join("transcripts-v2.jsonl").exists());
}

#[test]
fn missing_credentials_exit_with_hint() {
    let ws = small_workspace();
    let cfg = format!(
        "{SMALL}\n[[llm.variants]]\nid = \"remote\"\nprovider = \"openai\"\nmodel = \"m\"\napi_key_env = \"NADET_TEST_UNSET_KEY\"\n"
    );
    std::fs::write(ws.path().join("nadet.toml"), cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nadet"))
        .args(["detect", "--detector", "llm"])
        .current_dir(ws.path())
        .env_remove("NADET_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("set the NADET_TEST_UNSET_KEY environment variable"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let ws = small_workspace();
    let d = ws.path();
    let out = nadet(d, &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));

    assert_eq!(nadet(d, &["--config", "absent.toml", "split"]).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "[ingest]\nunknown_key = 1\n").unwrap();
    assert_eq!(nadet(d, &["--config", "bad.toml", "ingest"]).status.code(), Some(2));
    assert_eq!(nadet(d, &["train", "--profile", "gigantic"]).status.code(), Some(2));
    assert_eq!(nadet(d, &["pairs", "--split", "atlantis"]).status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    let d = tempfile::tempdir().unwrap();
    for s in ["ingest", "vocab", "inject", "split", "pairs", "train", "detect", "eval", "audit", "report", "config"] {
        let out = nadet(d.path(), &[s, "--help"]);
        assert!(out.status.success(), "{s}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage: nadet"), "{s}");
    }
}

#[test]
fn config_prints_resolved_values_with_overrides() {
    let ws = small_workspace();
    let out = ok(ws.path(), &["--seed", "11", "config"]);
    let parsed: toml::Value = toml::from_str(&out).unwrap();
    assert_eq!(parsed["seed"].as_integer(), Some(11));
    assert_eq!(parsed["ingest"]["queries_per_topic"].as_integer(), Some(30));
}
