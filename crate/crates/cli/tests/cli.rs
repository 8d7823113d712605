use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("retro-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn retro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retro")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn maze_generate_train_evaluate() {
    let dir = scratch("maze");
    let out = s(&dir);
    ok(&retro(&["generate", "--env", "maze", "--sizes", "9,11", "--counts", "6,2,4", "--out", out]));
    assert!(dir.join("instances/manifest.csv").is_file());
    assert_eq!(fs::read_dir(dir.join("instances/size-11/test")).unwrap().count(), 4);

    let stdout = ok(&retro(&["scale-up", "--mode", "retro_dagger", "--jobs", "1", "--out", out]));
    assert!(stdout.contains("size 11"), "{stdout}");
    assert!(dir.join("models/retro_dagger/size-11.model").is_file());
    assert!(dir.join("metrics-retro_dagger.csv").is_file());

    let stdout = ok(&retro(&["evaluate", "--modes", "all", "--out", out]));
    assert!(stdout.contains("retro_dagger size 11"), "{stdout}");
    assert!(stdout.contains("expert_baseline size 9"), "{stdout}");
    let summary = fs::read_to_string(dir.join("eval-summary.csv")).unwrap();
    assert!(summary.starts_with("# rng=chacha8-splitmix64"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bnb_results_csv_has_the_documented_columns() {
    let dir = scratch("bnb");
    let out = s(&dir);
    ok(&retro(&["generate", "--env", "bnb", "--mode", "expert_baseline", "--sizes", "12", "--counts", "4,1,3", "--out", out]));
    ok(&retro(&["evaluate", "--budget", "40", "--out", out]));
    let csv = fs::read_to_string(dir.join("results-expert_baseline-size-12.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "instance,budget,incumbent,optimum,gap_percent,expansions");
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn validate_theory_writes_csv() {
    let dir = scratch("theory");
    let stdout = ok(&retro(&["validate-theory", "--epsilons", "0.2", "--targets", "10", "--trials", "20000", "--out", s(&dir)]));
    assert!(stdout.contains("PASS"), "{stdout}");
    let csv = fs::read_to_string(dir.join("theory.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("epsilon,N,trials,mean,variance,alpha,tail_freq,bound_value")));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn exit_codes() {
    assert_eq!(retro(&["train"]).status.code(), Some(2));
    assert_eq!(retro(&["validate-theory", "--epsilons", "0.5", "--trials", "10", "--out", "/nonexistent/x"]).status.code(), Some(2));

    let dir = scratch("codes");
    let bad = dir.join("bad.toml");
    fs::write(&bad, "[experiment]\nenv = \"maze\"\nbogus = 1\n").unwrap();
    assert_eq!(retro(&["train", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(retro(&["train", "--config", s(&dir.join("missing.toml"))]).status.code(), Some(4));
    ok(&retro(&["generate", "--env", "maze", "--sizes", "9", "--counts", "2,1,1", "--out", s(&dir)]));
    assert_eq!(retro(&["scale-up", "--out", s(&dir)]).status.code(), Some(2));
    assert_eq!(retro(&["evaluate", "--modes", "retro_dagger", "--out", s(&dir)]).status.code(), Some(4));
    fs::remove_dir_all(&dir).unwrap();
}
