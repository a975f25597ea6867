use std::path::Path;
use std::process::{Command, Output};

fn rnhedge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnhedge")).args(args).output().unwrap()
}

const SMALL: &str = r#"
seed = 2
[world]
type = "bs"
mu = 0.05
sigma = 0.15
n_steps = 10
n_train = 1000
n_val = 1000
[policy]
arch = { type = "feedforward", hidden = [8] }
[train]
learning_rate = 1e-3
epochs = 1
eval_every = 2
[verify]
gamma = 0.0
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const CALLS: &str = "maturity,0.9,1,1.1\n0.1,0.1056,0.0252,0.0020\n0.2,0.1123,0.0357,0.0069\n";

#[test]
fn dlv_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let calls = write(dir.path(), "calls.csv", CALLS);
    let dlv = dir.path().join("dlv.csv");
    let back = dir.path().join("back.csv");
    let o = rnhedge(&["dlv", "encode", &calls, "--out", dlv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = rnhedge(&["dlv", "decode", dlv.to_str().unwrap(), "--out", back.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(&back).unwrap();
    let got: Vec<f64> = rd
        .records()
        .flat_map(|r| r.unwrap().iter().skip(1).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    let want = [0.1056, 0.0252, 0.0020, 0.1123, 0.0357, 0.0069];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn lint_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let clean = write(dir.path(), "clean.csv", CALLS);
    assert_eq!(rnhedge(&["dlv", "lint", &clean]).status.code(), Some(0));
    let bad = write(dir.path(), "bad.csv", &CALLS.replace("0.0357", "0.0200"));
    let o = rnhedge(&["dlv", "lint", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Calendar"));
    let missing = dir.path().join("nope.csv");
    assert_eq!(rnhedge(&["dlv", "lint", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", &SMALL.replace("epochs = 1", "epochs = 1\nepohcs = 2"));
    let o = rnhedge(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epohcs"));
    let cfg = write(dir.path(), "ok.cfg", SMALL);
    let o = rnhedge(&["price", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn staged_commands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL);
    let staged = dir.path().join("staged");
    let whole = dir.path().join("whole");
    for cmd in ["simulate", "train-arb", "reweight", "verify"] {
        let o = rnhedge(&[cmd, "--config", &cfg, "--out", staged.to_str().unwrap()]);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = rnhedge(&["run", "--config", &cfg, "--out", whole.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rel_entropy"));
    for f in ["metrics.csv", "band.csv", "weights_hist.csv"] {
        assert_eq!(std::fs::read(staged.join(f)).unwrap(), std::fs::read(whole.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_count_and_seed_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL);
    let run = |threads: &str, seed: &str, out: &str| {
        let o = dir.path().join(out);
        rnhedge(&["--threads", threads, "run", "--config", &cfg, "--seed", seed, "--out", o.to_str().unwrap()]);
        std::fs::read(o.join("metrics.csv")).unwrap()
    };
    let a = run("1", "9", "a");
    assert_eq!(a, run("4", "9", "b"));
    assert_ne!(a, run("1", "10", "c"));
}
