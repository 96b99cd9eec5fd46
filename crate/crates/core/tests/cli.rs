use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hkv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkv"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HKV_SEED")
        .env_remove("HKV_CONFIG")
        .env_remove("HKV_OUT")
        .output()
        .expect("spawn hkv")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json stdout")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("run.json");
    let cfg = serde_json::json!({
        "workload": { "n_tokens": 2048, "d": 16, "query_count": 10 },
        "budget_sweep": [128, 256],
        "context_sweep": [1024, 2048],
        "granularity_sweep": [1.0, 2.0],
        "audit_queries": 5
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hkv(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(hkv(&["query"], dir.path()).status.code(), Some(1));
    assert_eq!(hkv(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(
        hkv(&["chunk", "/no/such/file"], dir.path()).status.code(),
        Some(1)
    );
}

#[test]
fn chunk_prints_spans_that_tile_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = "Intro line one two three four five six seven.\n\nSecond paragraph, with commas; and more words here to fill.";
    std::fs::write(dir.path().join("in.txt"), text).unwrap();
    let spans = stdout_json(&hkv(&["chunk", "in.txt"], dir.path()));
    let spans = spans.as_array().unwrap();
    let mut expected_start = 0;
    for s in spans {
        assert_eq!(s["start"].as_u64().unwrap(), expected_start);
        expected_start = s["end"].as_u64().unwrap();
        assert!(s["boundary_kind"].is_string());
        assert!(s["preview_text"].is_string());
    }
    assert_eq!(expected_start as usize, text.split_whitespace().count());
    assert_eq!(spans[0]["boundary_kind"], "natural_l1");
}

#[test]
fn build_query_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let stats = stdout_json(&hkv(
        &["--config", &cfg, "--out", "idx", "build"],
        dir.path(),
    ));
    for key in [
        "M",
        "L",
        "P",
        "mean_radius_fine",
        "mean_radius_coarse",
        "index_bytes",
        "kv_bytes",
        "ratio",
    ] {
        assert!(stats.get(key).is_some(), "missing {key}");
    }
    let l = stats["L"].as_u64().unwrap();
    assert!(dir.path().join("idx/index.json").exists());

    std::fs::write(
        dir.path().join("q.json"),
        serde_json::to_string(&vec![0.25; 16]).unwrap(),
    )
    .unwrap();
    let q = stdout_json(&hkv(
        &[
            "--config",
            &cfg,
            "query",
            "--index",
            "idx/index.json",
            "--query",
            "q.json",
            "--k-c",
            "3",
            "--k-g",
            "2",
        ],
        dir.path(),
    ));
    assert_eq!(q["selected_clusters"].as_array().unwrap().len(), 3);
    assert_eq!(q["output_vector"].as_array().unwrap().len(), 16);
    assert!(q["active_count"].as_u64().unwrap() > 0);
    assert!(q["scanned_centroids"].as_u64().unwrap() > 0);

    let bad_dim = dir.path().join("bad.json");
    std::fs::write(&bad_dim, "[1.0, 2.0]").unwrap();
    let out = hkv(
        &["query", "--index", "idx/index.json", "--query", "bad.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    let csv = hkv(&["export", "--index", "idx/index.json"], dir.path());
    assert!(csv.status.success());
    let csv = String::from_utf8(csv.stdout).unwrap();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("chunk_id,cluster_id,unit_id,k0,"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len() as u64, stats["M"].as_u64().unwrap());
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 3 + 16);
        assert!(fields[1].parse::<u64>().unwrap() < l);
    }
}

#[test]
fn stream_emits_one_line_per_step_then_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = hkv(
        &[
            "--config",
            &cfg,
            "--seed",
            "4",
            "stream",
            "--prefill",
            "1024",
            "--steps",
            "40",
            "--blob",
            "0",
            "--budget",
            "256",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 41);
    for (i, step) in lines[..40].iter().enumerate() {
        assert_eq!(step["step"].as_u64().unwrap(), i as u64);
        let hit = step["window_hit"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&hit));
    }
    assert!(lines[0]["jaccard"].is_null());
    assert!(lines[40]["summary"]["grafts"].as_u64().unwrap() >= 1);
}

#[test]
fn bench_writes_identical_reports_and_env_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for out_dir in ["a", "b"] {
        let out = hkv(
            &["--config", &cfg, "--seed", "3", "--out", out_dir, "bench"],
            dir.path(),
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in ["summary.json", "cells.csv", "queries.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let summary: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["workload"]["seed"], 3);
    assert_eq!(summary["cells"].as_array().unwrap().len(), 8);

    let out = Command::new(env!("CARGO_BIN_EXE_hkv"))
        .arg("bench")
        .current_dir(dir.path())
        .env("HKV_CONFIG", &cfg)
        .env("HKV_SEED", "3")
        .env("HKV_OUT", "c")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("c/cells.csv")).unwrap(),
        std::fs::read(dir.path().join("a/cells.csv")).unwrap()
    );
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"budget_sweep": []}"#).unwrap();
    let out = hkv(&["--config", path.to_str().unwrap(), "bench"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-empty"));
}

#[test]
fn tampered_index_exits_with_audit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    stdout_json(&hkv(
        &["--config", &cfg, "--out", "idx", "build"],
        dir.path(),
    ));
    let mut index: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("idx/index.json")).unwrap()).unwrap();
    index["fine"][0]["radius"] = serde_json::json!(0.0);
    std::fs::write(dir.path().join("idx/index.json"), index.to_string()).unwrap();
    std::fs::write(
        dir.path().join("q.json"),
        serde_json::to_string(&vec![0.1; 16]).unwrap(),
    )
    .unwrap();
    let out = hkv(
        &["query", "--index", "idx/index.json", "--query", "q.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        hkv(&["export", "--index", "idx/index.json"], dir.path())
            .status
            .code(),
        Some(2)
    );
}
