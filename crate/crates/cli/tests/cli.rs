use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn moegeo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moegeo"))
        .args(args)
        .current_dir(dir)
        .env_remove("MOEGEO_SEED")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn barrier_smoke_is_small_fast_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out =
        moegeo(&["barrier", "--trials", "1", "--mu-grid", "0,0.3", "--out", "a", "--parallelism", "1"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    let csv = fs::read_to_string(tmp.path().join("a/barrier.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mu_target,mu_measured_mean,success_greedy,success_omp,trials,k,bound");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",1,6,0.090909"));

    let again =
        moegeo(&["barrier", "--trials", "1", "--mu-grid", "0,0.3", "--out", "b", "--parallelism", "2"], tmp.path());
    assert!(again.status.success());
    for f in ["barrier.csv", "summary.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn barrier_defaults_write_full_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = moegeo(&["barrier", "--trials", "4", "--out", "o"], tmp.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("o/barrier.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    let summary = json(&tmp.path().join("o/summary.json"));
    assert!((summary["theoretical_bound"].as_f64().unwrap() - 1.0 / 11.0).abs() < 1e-15);
    assert_eq!(summary["mu_grid"].as_array().unwrap().len(), 25);
    assert!(summary["largest_full_success_mu"].as_f64().is_some());
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("desc.json"), r#"{"mu_grid": [0.5, 0.2]}"#).unwrap();
    let out = moegeo(&["barrier", "--config", "desc.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim(), "config: mu_grid must ascend");

    fs::write(tmp.path().join("unknown.json"), r#"{"trails": 3}"#).unwrap();
    let out = moegeo(&["barrier", "--config", "unknown.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = moegeo(&["train", "--active", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_smoke_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.json"), "{ \"epochs\": 1,\n  \"out_dir\": \"run\" }\n").unwrap();
    let start = Instant::now();
    let out = moegeo(&["train", "--config", "cfg.json", "--folds", "2"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 30.0);
    let dir = tmp.path().join("run");
    assert_eq!(fs::read_to_string(dir.join("config.json")).unwrap(), "{ \"epochs\": 1,\n  \"out_dir\": \"run\" }\n");

    let run = fs::read_to_string(dir.join("run.csv")).unwrap();
    assert_eq!(
        run.lines().next().unwrap(),
        "fold,epoch,loss_task,loss_aux,loss_reg,test_acc,eff_rank,coherence,marg_entropy"
    );
    assert_eq!(run.lines().count(), 1 + 2 * 2);
    let heat = fs::read_to_string(dir.join("heatmap.csv")).unwrap();
    assert_eq!(heat.lines().next().unwrap(), "expert,class,freq");
    assert_eq!(heat.lines().count(), 1 + 16 * 10);

    let agg = json(&dir.join("aggregate.json"));
    assert_eq!(agg["reg_kind"], "none");
    assert_eq!(agg["folds"], 2);
    let accs: Vec<f64> = agg["fold_acc"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((agg["mean_acc"].as_f64().unwrap() - accs.iter().sum::<f64>() / 2.0).abs() < 1e-12);
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.json"), r#"{"seed": 5}"#).unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_moegeo"));
        cmd.args(["verify", "--checks", "ambiguity", "--config", "cfg.json", "--out", "v"])
            .args(extra)
            .current_dir(tmp.path());
        match env {
            Some(v) => cmd.env("MOEGEO_SEED", v),
            None => cmd.env_remove("MOEGEO_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        json(&tmp.path().join("v/verify.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&[], None), 5);
    assert_eq!(run(&[], Some("9")), 9);
    assert_eq!(run(&["--seed", "11"], Some("9")), 11);
}

#[test]
fn verify_filters_and_catches_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = moegeo(&["verify", "--checks", "thm5", "--out", "ok"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&tmp.path().join("ok/verify.json"));
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 1);
    assert_eq!(checks[0]["name"], "orthogonal-topk");

    let out = moegeo(&["verify", "--inject-fault", "kl-sign", "--out", "bad"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let report = json(&tmp.path().join("bad/verify.json"));
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, vec!["kl-projection"]);
}

#[test]
fn small_commands_print_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = moegeo(&["kl-project", "--probs", "0.5,0.3,0.2", "--k", "2"], tmp.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["support"], serde_json::json!([0, 1]));
    assert!((v["kl"].as_f64().unwrap() + 0.8f64.ln()).abs() < 1e-15);

    let out = moegeo(&["dpp-select", "--n", "8", "--k", "3"], tmp.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["ratio"].as_f64().unwrap() >= 1.0 - (-1.0f64).exp());

    let out = moegeo(&["info", "--experts", "8", "--k", "2", "--tokens", "50", "--out", "i"], tmp.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["conditional_entropy"].as_f64().unwrap() <= 2f64.ln() + 1e-9);
    assert!(tmp.path().join("i/info.json").exists());
}
