use std::path::Path;
use std::process::{Command, Output};

use hingepo::mdp::Mdp;

fn hingepo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hingepo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_random(dir: &Path, seed: &str) -> String {
    let path = dir.join(format!("mdp{seed}.json"));
    let out = hingepo(&["gen-mdp", "--kind", "random", "--n-states", "4", "--n-actions", "2", "--seed", seed, "--output", s(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn generators_write_valid_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_random(dir.path(), "5");
    let b = dir.path().join("again.json");
    assert_eq!(code(&hingepo(&["gen-mdp", "--kind", "random", "--n-states", "4", "--n-actions", "2", "--seed", "5", "--output", s(&b)])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let chain = dir.path().join("chain.json");
    assert_eq!(code(&hingepo(&["gen-mdp", "--kind", "chain", "--n-states", "1", "--output", s(&chain)])), 0);
    let mdp = Mdp::from_json(&std::fs::read_to_string(&chain).unwrap()).unwrap();
    assert_eq!(mdp.next_state_dist(0, 0), &[1.0]);

    let grid = dir.path().join("grid.json");
    assert_eq!(code(&hingepo(&["gen-mdp", "--kind", "gridworld", "--width", "3", "--height", "3", "--output", s(&grid)])), 0);
    assert_eq!(Mdp::from_json(&std::fs::read_to_string(&grid).unwrap()).unwrap().n_states(), 9);
    assert_eq!(code(&hingepo(&["gen-mdp", "--kind", "gridworld", "--width", "0"])), 2);
}

#[test]
fn tabular_run_writes_metrics_trace_and_copy() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = gen_random(dir.path(), "1");
    let out_dir = dir.path().join("run");
    let copy = dir.path().join("copy.csv");
    let trace = dir.path().join("trace.jsonl");
    let out = hingepo(&[
        "run-tabular", "--mdp", &mdp, "--iters", "20", "--emda-step", "0.05", "--emda-iters", "3",
        "--out-dir", s(&out_dir), "--out", s(&copy), "--trace-emda", s(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("iter,gap,min_improvement,clip_fraction,entropy\n"));
    assert_eq!(csv.lines().count(), 21);
    assert_eq!(std::fs::read_to_string(&copy).unwrap(), csv);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|l| l["k"].as_u64().unwrap() < 3));
    assert!(out_dir.join("summary.json").exists() && out_dir.join("manifest.json").exists());
}

#[test]
fn neural_run_writes_schema_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = gen_random(dir.path(), "2");
    let out_dir = dir.path().join("run");
    let out = hingepo(&[
        "run-neural", "--mdp", &mdp, "--T", "4", "--t-upd", "64", "--width-f", "16", "--width-q", "16",
        "--paper-schedule", "--out-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("iter,tau,gap,min_gap,td_mse,sgd_mse,clip_fraction,c_min,c_max\n"));
    assert_eq!(csv.lines().count(), 5);
    let net = hingepo::nn::TwoLayerNet::load(&out_dir.join("energy.hpo"), 10.0).unwrap();
    assert_eq!(net.width(), 16);
}

#[test]
fn sweep_writes_one_csv_per_member() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = gen_random(dir.path(), "3");
    let out_dir = dir.path().join("sweep");
    let out = hingepo(&[
        "sweep", "--mode", "tabular", "--mdp", &mdp, "--iters", "10", "--classifiers", "ratio,sub,root,log",
        "--seeds", "1,2,3,4,5", "--jobs", "2", "--out-dir", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csvs = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 20);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 4);
    assert_eq!(summary[0]["runs"], 5);
}

#[test]
fn replay_reproduces_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = gen_random(dir.path(), "4");
    let first = dir.path().join("first");
    let out = hingepo(&[
        "sweep", "--mode", "neural", "--mdp", &mdp, "--T", "3", "--t-upd", "32", "--width-f", "8", "--width-q", "8",
        "--classifiers", "ratio,log", "--seeds", "1,2", "--out-dir", s(&first),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = first.join("manifest.json");
    let second = dir.path().join("second");
    assert_eq!(code(&hingepo(&["replay", s(&manifest), "--check", "--out-dir", s(&second)])), 0);

    std::fs::write(first.join("neural_ratio_seed1.csv"), "tampered\n").unwrap();
    let third = dir.path().join("third");
    assert_eq!(code(&hingepo(&["replay", s(&manifest), "--check", "--out-dir", s(&third)])), 1);
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = gen_random(dir.path(), "6");
    let out_dir = dir.path().join("x");
    assert_eq!(code(&hingepo(&["run-tabular", "--mdp", &mdp, "--t-upd", "8", "--out-dir", s(&out_dir)])), 2);
    assert_eq!(code(&hingepo(&["run-neural", "--mdp", &mdp, "--iters", "8", "--out-dir", s(&out_dir)])), 2);

    let config = dir.path().join("config.json");
    std::fs::write(&config, format!(r#"{{"mdp": "{mdp}", "margin": -1.0}}"#)).unwrap();
    assert_eq!(code(&hingepo(&["run-tabular", "--config", s(&config), "--out-dir", s(&out_dir)])), 2);
    std::fs::write(&config, r#"{"bogus": 1}"#).unwrap();
    assert_eq!(code(&hingepo(&["run-tabular", "--config", s(&config)])), 2);
    assert_eq!(code(&hingepo(&["no-such-command"])), 2);
    assert_eq!(code(&hingepo(&["run-tabular", "--out-dir", s(&out_dir)])), 2);
}

#[test]
fn config_file_supplies_values_that_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = gen_random(dir.path(), "7");
    let config = dir.path().join("config.json");
    std::fs::write(&config, format!(r#"{{"mdp": "{mdp}", "iters": 30, "eta": 0.02, "seed": 4}}"#)).unwrap();
    let out_dir = dir.path().join("run");
    let out = hingepo(&["run-tabular", "--config", s(&config), "--iters", "12", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([4]));
    assert_eq!(manifest["job"]["config"]["emda"]["eta"], 0.02);
}

#[test]
fn check_command_prints_reports() {
    let out = hingepo(&["check", "--suite", "closed-form", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports[0]["name"], "closed-form");
    assert_eq!(reports[0]["passed"], true);
}
