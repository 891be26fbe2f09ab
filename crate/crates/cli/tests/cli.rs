use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mgdispatch"));
    c.env("RUST_BACKTRACE", "0");
    c
}

fn tmp(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn solve_prints_one_json_object() {
    let out = bin().args(["solve", "--config", "bundled:benchmark_table1_sync"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["p_star"][2], 90.0);
    assert_eq!(v["active_set"][2], "upper");
}

#[test]
fn run_writes_identical_files_for_equal_seeds() {
    let run = |dir: &PathBuf, seed: &str| {
        let st = bin()
            .args(["run-async", "--config", "bundled:benchmark_table1_async_rates", "--seed", seed, "--out"])
            .arg(dir)
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(dir.join("benchmark_table1_async_rates_trace.csv")).unwrap()
    };
    let (a, b, c) = (run(&tmp("cli_a"), "7"), run(&tmp("cli_b"), "7"), run(&tmp("cli_c"), "8"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# algorithm=asdpd\n# seed=7\n# config_hash="));
    assert!(text.lines().nth(4).unwrap().starts_with("k_global,t_s,agent,mu,z,p_g,omega,v,err_oracle,residual"));
}

#[test]
fn json_format_and_summary() {
    let dir = tmp("cli_json");
    let st = bin()
        .args(["run-sync", "--config", "bundled:benchmark_table1_sync", "--format", "json", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(st.success());
    let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("benchmark_table1_sync_trace.json")).unwrap()).unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("benchmark_table1_sync_summary.json")).unwrap()).unwrap();
    assert_eq!(trace["meta"]["config_hash"], summary["config_hash"]);
    assert_eq!(summary["result"]["converged"], true);
}

#[test]
fn bad_config_reports_every_error() {
    let dir = tmp("cli_bad");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{"name": "bad", "algorithm": "asdpd",
            "problem": {"agents": [{"a": 1, "b": 0, "p_min": 0, "p_max": 10, "p_d": 5, "kind": "ac"},
                                   {"a": 1, "b": 0, "p_min": 0, "p_max": 10, "p_d": 5, "kind": "dc"}]},
            "graph": {"communication": {"edges": [[1, 3]]}},
            "steps": {"eta": 2.0}}"#,
    )
    .unwrap();
    let out = bin().args(["run-async", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("(1, 3)") && err.contains("eta") && err.contains("`async`"), "{err}");
}

#[test]
fn unknown_bundled_name_fails() {
    let out = bin().args(["solve", "--config", "bundled:nope"]).output().unwrap();
    assert!(!out.status.success());
}
