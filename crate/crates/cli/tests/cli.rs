//! End-to-end tests of the remsim binary: artifact layout, exit codes, and
//! byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn remsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn repo_scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn simulate(config: &Path, trace: &Path, seed: &str, out: &Path) -> Output {
    remsim(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn simulate_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(
        &repo_scenarios().join("overwritable.toml"),
        &repo_scenarios().join("baseline.jsonl"),
        "7",
        &dir.path().join("run"),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["remanence"]["remanence_rate"], 1.0);
    assert_eq!(report["scenario"]["master_seed"], 7);

    let image = fs::read(dir.path().join("run/image.bin")).unwrap();
    assert_eq!(image.len(), 64 * 4096);
    let sidecar: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("run/image.meta.json")).unwrap()).unwrap();
    assert_eq!(sidecar["geometry"]["frame_count"], 64);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = simulate(
            &repo_scenarios().join("flash.toml"),
            &repo_scenarios().join("full_policy.jsonl"),
            "99",
            &dir.path().join(sub),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["report.json", "image.bin", "image.meta.json"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn full_policy_reports_zero_remanence() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(
        &repo_scenarios().join("overwritable.toml"),
        &repo_scenarios().join("full_policy.jsonl"),
        "42",
        dir.path(),
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["remanence"]["remanence_rate"], 0.0);
    assert_eq!(report["completions"][0]["status"], "deleted");
}

#[test]
fn partial_policy_reports_residue() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(
        &repo_scenarios().join("overwritable.toml"),
        &repo_scenarios().join("partial_policy.jsonl"),
        "42",
        dir.path(),
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["completions"][0]["status"], "residue_found");
    assert_eq!(report["remanence"]["remanence_rate"], 1.0);
}

#[test]
fn scan_subcommand_finds_planted_payload() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = simulate(
        &repo_scenarios().join("overwritable.toml"),
        &repo_scenarios().join("baseline.jsonl"),
        "42",
        &run,
    );
    assert!(out.status.success());

    // Manifest: the payloads the trace wrote (seeds 1000..1008).
    let manifest: Vec<serde_json::Value> = (0..8u64)
        .map(|page| {
            let payload = remsim_core::SplitMix64::bytes(1000 + page, 4096);
            serde_json::json!({"page": page, "payload": hex::encode(payload)})
        })
        .collect();
    let manifest_path = dir.path().join("manifest.json");
    fs::write(&manifest_path, serde_json::to_vec(&manifest).unwrap()).unwrap();

    let report_path = dir.path().join("scan.json");
    let out = remsim(&[
        "scan",
        "--image",
        run.join("image.bin").to_str().unwrap(),
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--window",
        "16",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(report_path).unwrap()).unwrap();
    assert_eq!(report["deleted_pages_total"], 8);
    assert_eq!(report["deleted_pages_recoverable"], 8);
    assert_eq!(report["remanence_rate"], 1.0);
}

#[test]
fn report_subcommand_emits_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(
        &repo_scenarios().join("overwritable.toml"),
        &repo_scenarios().join("baseline.jsonl"),
        "42",
        dir.path(),
    );
    assert!(out.status.success());
    let out = remsim(&["report", "--in", dir.path().to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("kind,page_size,frame_count"));
    assert!(lines.next().unwrap().starts_with("overwritable,4096,64"));
}

#[test]
fn unsupported_format_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("report.json"), b"{}").unwrap();
    let out = remsim(&["report", "--in", dir.path().to_str().unwrap(), "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_trace_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.jsonl");
    fs::write(&trace, b"{\"t\":0,\"op\":\"wipe\",\"page\":1}\n").unwrap();
    let out = simulate(
        &repo_scenarios().join("overwritable.toml"),
        &trace,
        "42",
        &dir.path().join("out"),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn runtime_abort_exits_3_with_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("abort.jsonl");
    fs::write(&trace, b"{\"t\":0,\"op\":\"baseline_delete\",\"page\":9}\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = simulate(
        &repo_scenarios().join("overwritable.toml"),
        &trace,
        "42",
        &out_dir,
    );
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["aborted"].is_string());
}
