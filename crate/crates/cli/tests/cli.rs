use std::path::Path;
use std::process::{Command, Output};

fn xts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xts"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn gen_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen", "--dims", "64", "64", "64", "--rank", "5", "--seed", "1", "--out", "t.xts"];
    assert_eq!(code(&xts(dir.path(), &args)), 0);
    let first = std::fs::read(dir.path().join("t.xts")).unwrap();
    let factors = std::fs::read(dir.path().join("t.factors.xts")).unwrap();
    assert_eq!(first.len(), 32 + 8 * 64 * 64 * 64);
    assert_eq!(code(&xts(dir.path(), &args)), 0);
    assert_eq!(std::fs::read(dir.path().join("t.xts")).unwrap(), first);
    assert_eq!(std::fs::read(dir.path().join("t.factors.xts")).unwrap(), factors);
}

#[test]
fn decompose_writes_one_metrics_record_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&xts(d, &["gen", "--dims", "64", "64", "64", "--rank", "5", "--seed", "1", "--out", "t.xts"])), 0);
    let out = xts(
        d,
        &["decompose", "--in", "t.xts", "--reduced", "16", "16", "16", "--rank", "5", "--out", "f/", "--metrics", "m.jsonl"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("m.jsonl")).unwrap();
    let stages: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(stages, ["compression", "decomposition", "alignment", "recovery"]);

    let eval = xts(d, &["eval", "--in", "t.factors.xts", "--recovered", "f/factors.xts"]);
    assert_eq!(code(&eval), 0);
    let v: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    for e in v["factor_errors"].as_array().unwrap() {
        assert!(e.as_f64().unwrap() < 1e-6, "{v}");
    }
}

#[test]
fn failure_still_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&xts(d, &["gen", "--dims", "20", "20", "20", "--rank", "2", "--out", "t.xts"])), 0);
    let out = xts(
        d,
        &["decompose", "--in", "t.xts", "--reduced", "8", "8", "8", "--rank", "2", "--replicas", "1", "--out", "f", "--metrics", "m.jsonl"],
    );
    assert_eq!(code(&out), 1);
    let text = std::fs::read_to_string(d.join("m.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("skipped"));
}

#[test]
fn deterministic_runs_match_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&xts(d, &["gen", "--dims", "40", "36", "32", "--rank", "3", "--seed", "4", "--out", "t.xts"])), 0);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let o = Command::new(env!("CARGO_BIN_EXE_xts"))
            .current_dir(d)
            .env("XTS_THREADS", threads)
            .args(["decompose", "--in", "t.xts", "--reduced", "10", "10", "10", "--rank", "3", "--block", "16", "16", "16"])
            .args(["--deterministic", "--precision", "mixed", "--out", threads])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(d.join(threads).join("factors.xts")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sparse_and_two_stage_modes_recover_sparse_factors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = ["gen", "--dims", "150", "150", "150", "--rank", "3", "--mode", "sparse", "--sparsity", "3", "--seed", "2", "--out", "s.xts"];
    assert_eq!(code(&xts(d, &g)), 0);
    let common = ["decompose", "--in", "s.factors.xts", "--reduced", "20", "20", "20", "--rank", "3", "--sparsity", "3"];
    for (mode, out) in [("sparse", "a"), ("two-stage", "b")] {
        let o = Command::new(env!("CARGO_BIN_EXE_xts"))
            .current_dir(d)
            .args(common)
            .args(["--mode", mode, "--out", out])
            .args(if mode == "sparse" { vec!["--replicas", "3"] } else { vec![] })
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let eval = xts(d, &["eval", "--in", "s.factors.xts", "--recovered", &format!("{out}/factors.xts")]);
        let v: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
        for e in v["factor_errors"].as_array().unwrap() {
            assert!(e.as_f64().unwrap() < 1e-6, "{mode}: {v}");
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&xts(d, &["gen", "--dims", "4", "4"])), 2);
    assert_eq!(code(&xts(d, &["gen", "--dims", "12", "12", "12", "--rank", "2", "--out", "t.xts"])), 0);
    let too_big = ["decompose", "--in", "t.xts", "--reduced", "20", "4", "4", "--rank", "2", "--out", "f"];
    assert_eq!(code(&xts(d, &too_big)), 2);
    std::fs::write(d.join("bad.xts"), b"not a tensor").unwrap();
    let bad = ["decompose", "--in", "bad.xts", "--reduced", "4", "4", "4", "--rank", "2", "--out", "f"];
    assert_eq!(code(&xts(d, &bad)), 1);
    let both = ["decompose", "--in", "t.xts", "--reduced", "4", "4", "4", "--rank", "2", "--replicas", "3", "--auto-replicas", "--out", "f"];
    assert_eq!(code(&xts(d, &both)), 2);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = xts(dir.path(), &["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
}
