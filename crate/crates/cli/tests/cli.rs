use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vla-rig"));
    c.env("RUST_LOG", "warn");
    c
}

fn run_ok(args: &[&str], dir: &Path) -> Value {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts `serve` on an ephemeral port and returns it with its address.
fn spawn_server(args: &[&str], dir: &Path) -> (Server, String) {
    let mut child = bin()
        .arg("serve")
        .args(args)
        .args(["--addr", "127.0.0.1:0"])
        .current_dir(dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut reader = BufReader::new(child.stdout.take().unwrap());
    let mut text = String::new();
    loop {
        let mut line = String::new();
        assert!(
            reader.read_line(&mut line).unwrap() > 0,
            "server exited early"
        );
        text.push_str(&line);
        if line.trim_end() == "}" {
            break;
        }
    }
    let summary: Value = serde_json::from_str(&text).unwrap();
    let addr = summary["listening"].as_str().unwrap().to_string();
    (Server(child), addr)
}

#[test]
fn collect_is_deterministic_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = run_ok(
        &[
            "collect",
            "--n-episodes",
            "50",
            "--seed",
            "1",
            "--out",
            "a.jsonl",
        ],
        d,
    );
    assert_eq!(s["episodes"], 50);
    assert_eq!(s["replay"]["removed"], 0);
    run_ok(
        &[
            "collect",
            "--n-episodes",
            "50",
            "--seed",
            "1",
            "--out",
            "b.jsonl",
        ],
        d,
    );
    assert_eq!(
        std::fs::read(d.join("a.jsonl")).unwrap(),
        std::fs::read(d.join("b.jsonl")).unwrap()
    );
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("a.jsonl.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "collect");
    assert_eq!(manifest["seeds"][0], 1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn collect_zero_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &["collect", "--n-episodes", "0", "--out", "e.jsonl"],
        dir.path(),
    );
    let text = std::fs::read_to_string(dir.path().join("e.jsonl")).unwrap();
    assert_eq!(text, "{\"format\":\"vla-episodes\",\"version\":1}\n");
}

#[test]
fn curate_drops_one_step_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["collect", "--n-episodes", "12", "--out", "raw.jsonl"], d);
    let s = run_ok(
        &[
            "curate",
            "--dataset",
            "raw.jsonl",
            "--noop",
            "false",
            "--out",
            "cur.jsonl",
        ],
        d,
    );
    assert_eq!(s["removed_steps"], 12);
    assert_eq!(s["first_transition_removed"], 12);
    assert_eq!(s["episodes_out"], 12);
    // idle first steps are no-ops too, but only ever counted once
    let s = run_ok(
        &["curate", "--dataset", "raw.jsonl", "--out", "cur2.jsonl"],
        d,
    );
    assert_eq!(s["removed_steps"], 12);
    let s = run_ok(
        &[
            "curate",
            "--dataset",
            "raw.jsonl",
            "--drop-first",
            "false",
            "--out",
            "cur3.jsonl",
        ],
        d,
    );
    assert_eq!(s["noop_removed"], 12);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), r#"{"n_episodes": 3, "seed": 5}"#).unwrap();
    let s = run_ok(&["collect", "--config", "c.json", "--out", "x.jsonl"], d);
    assert_eq!(s["episodes"], 3);
    let s = run_ok(
        &[
            "collect",
            "--config",
            "c.json",
            "--n-episodes",
            "2",
            "--out",
            "y.jsonl",
        ],
        d,
    );
    assert_eq!(s["episodes"], 2);
    let m: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("y.jsonl.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config"]["n_episodes"], 2);
    assert_eq!(m["config"]["seed"], 5);

    std::fs::write(d.join("bad.json"), r#"{"n_episode": 3}"#).unwrap();
    let out = run(&["collect", "--config", "bad.json", "--out", "z.jsonl"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn missing_input_is_an_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["fit-codec", "--dataset", "nope.jsonl", "--out", "c.json"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}

#[test]
fn sample_mixture_matches_weights() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_ok(
        &["sample-mixture", "--draws", "200000", "--seed", "3"],
        dir.path(),
    );
    assert!(s["l1_distance"].as_f64().unwrap() < 0.01, "{s}");
    let s = run_ok(
        &["sample-mixture", "--draws", "50000", "--progress", "0.7"],
        dir.path(),
    );
    assert_eq!(s["removal_active"], true);
    let droid = s["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["dataset_name"].as_str().unwrap().contains("DROID"))
        .unwrap();
    assert_eq!(droid["count"], 0);
}

#[test]
fn full_pipeline_blocking_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(
        &[
            "collect",
            "--n-episodes",
            "50",
            "--seed",
            "1",
            "--out",
            "raw.jsonl",
        ],
        d,
    );
    run_ok(
        &["curate", "--dataset", "raw.jsonl", "--out", "cur.jsonl"],
        d,
    );
    run_ok(
        &["fit-codec", "--dataset", "cur.jsonl", "--out", "codec.json"],
        d,
    );
    let t = run_ok(
        &[
            "train",
            "--dataset",
            "cur.jsonl",
            "--codec",
            "codec.json",
            "--out",
            "policy.json",
        ],
        d,
    );
    assert!(t["token_accuracy"].as_f64().unwrap() >= 0.95, "{t}");
    assert_eq!(t["reached_target"], true);
    assert!(t["epochs_run"].as_u64().unwrap() <= 30);

    std::fs::write(
        d.join("plan.json"),
        r#"{"task_name": "pick-place", "n_trials": 10, "master_seed": 3,
            "mode": {"mode": "blocking", "control_hz": 5.0},
            "policies": [
              {"name": "expert", "kind": "expert"},
              {"name": "toy", "kind": "local", "policy": "policy.json", "codec": "codec.json"}
            ]}"#,
    )
    .unwrap();
    let e = run_ok(&["eval", "--plan", "plan.json", "--out", "report.json"], d);
    assert_eq!(e["any_invalid"], false);
    assert_eq!(e["policies"][0]["n"], 10);
    assert!(d.join("report.json.manifest.json").exists());

    let out = run(&["report", "--input", "report.json"], d);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("expert  100.0 ± 0.0% (10)"), "{table}");
    let out = run(&["report", "--input", "report.json", "--format", "json"], d);
    let back: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(back["n_trials"], 10);
}

#[test]
fn eval_with_unreachable_policy_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("plan.json"),
        r#"{"task_name": "t", "n_trials": 2, "master_seed": 0,
            "mode": {"mode": "blocking", "control_hz": 5.0},
            "policies": [{"name": "gone", "kind": "local", "policy": "missing.json", "codec": "missing.json"}]}"#,
    )
    .unwrap();
    let out = run(&["eval", "--config", "plan.json"], d);
    assert_eq!(out.status.code(), Some(2));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["any_invalid"], true);
}

#[test]
fn bench_against_served_stub() {
    let dir = tempfile::tempdir().unwrap();
    let (_server, addr) = spawn_server(
        &["--stub", "--delay-ms", "167", "--label", "bf16-sim"],
        dir.path(),
    );
    let s = run_ok(
        &["bench", "--addr", &addr, "--n", "12", "--out", "bench.json"],
        dir.path(),
    );
    let hz = s["achieved_hz"].as_f64().unwrap();
    assert!((5.0..=6.5).contains(&hz), "{hz}");
    assert_eq!(s["complete"], true);
    assert!(dir.path().join("bench.json.manifest.json").exists());
}

#[test]
fn served_policy_answers_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(&["collect", "--n-episodes", "5", "--out", "raw.jsonl"], d);
    run_ok(
        &["fit-codec", "--dataset", "raw.jsonl", "--out", "codec.json"],
        d,
    );
    run_ok(
        &[
            "train",
            "--dataset",
            "raw.jsonl",
            "--codec",
            "codec.json",
            "--epochs",
            "1",
            "--out",
            "p.json",
        ],
        d,
    );
    let (_server, addr) = spawn_server(&["--policy", "p.json", "--codec", "codec.json"], d);
    let plan = format!(
        r#"{{"task_name": "t", "n_trials": 2, "master_seed": 0,
            "mode": {{"mode": "non_blocking", "control_hz": 5.0, "policy_hz": 5.0}},
            "policies": [{{"name": "served", "kind": "remote", "addr": "{addr}"}}]}}"#
    );
    std::fs::write(d.join("plan.json"), plan).unwrap();
    let s = run_ok(&["eval", "--plan", "plan.json"], d);
    assert_eq!(s["any_invalid"], false);
}
