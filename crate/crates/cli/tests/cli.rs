//! End-to-end runs of the `dialact` binary on a tiny synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SPEC: &str = r#"
utterances_per_dialog = 5
sizes = { train = 30, valid = 10, test = 10 }

[[classes]]
name = "STATEMENT"
templates = ["right", "that is it"]
prosody = { contour = "flat" }

[[classes]]
name = "QUESTION"
templates = ["right ?", "is it ?"]
prosody = { contour = "rise" }
"#;

const CONFIG: &str = "epochs = 2\nbatch_size = 5\nembed_dim = 6\nmaps_per_width = 2\nhidden_dim = 4\nacoustic_maps = 2\nmax_frames = 40\npool_frames = 5\n";

fn dialact(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialact"))
        .current_dir(dir)
        .env_remove("DIALACT_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "failed: {}", stderr(&o));
    o
}

/// Workspace with `spec.toml`, `cfg.toml` and a corpus in `c/`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    ok(dialact(
        dir.path(),
        &["synth", "--spec", "spec.toml", "--seed", "7", "--out", "c"],
    ));
    dir
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn echoed_line(o: &Output) -> String {
    stderr(o)
        .lines()
        .find_map(|l| l.strip_prefix("config: dialact "))
        .expect("config echo")
        .to_string()
}

#[test]
fn synth_is_deterministic() {
    let w = workspace();
    ok(dialact(
        w.path(),
        &["synth", "--spec", "spec.toml", "--seed", "7", "--out", "c2"],
    ));
    ok(dialact(
        w.path(),
        &["synth", "--spec", "spec.toml", "--seed", "8", "--out", "c3"],
    ));
    let a = tree(&w.path().join("c"));
    assert!(a.iter().any(|(p, _)| p.ends_with("train.tsv")));
    assert!(a
        .iter()
        .any(|(p, _)| p.extension().is_some_and(|e| e == "wav")));
    assert_eq!(a, tree(&w.path().join("c2")));
    assert_ne!(a, tree(&w.path().join("c3")));
}

#[test]
fn unknown_flags_and_bad_values_exit_1() {
    let w = workspace();
    let o = dialact(w.path(), &["stats", "--corpus", "c", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dialact(
        w.path(),
        &["train", "--model", "rnn", "--corpus", "c", "--out", "m"],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = dialact(
        w.path(),
        &[
            "train", "--model", "lm", "--corpus", "c", "--out", "m", "--set", "epochs=0",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = dialact(
        w.path(),
        &[
            "train",
            "--model",
            "lm",
            "--corpus",
            "c",
            "--out",
            "m",
            "--set",
            "no_such_key=1",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!w.path().join("m").exists());
    let o = dialact(w.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let w = workspace();
    let o = dialact(w.path(), &["stats", "--corpus", "missing"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error:"));
}

#[test]
fn help_exits_0() {
    let w = tempfile::tempdir().unwrap();
    let o = ok(dialact(w.path(), &["--help"]));
    for cmd in [
        "synth",
        "extract-mfcc",
        "train",
        "evaluate",
        "predict",
        "ablate-qmark",
        "report-singleword",
        "stats",
    ] {
        assert!(stdout(&o).contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn stats_reports_majority_baseline() {
    let w = workspace();
    let o = ok(dialact(
        w.path(),
        &["stats", "--corpus", "c", "--out", "stats.txt"],
    ));
    assert!(stdout(&o).contains("majority class STATEMENT = 50.0%"));
    assert_eq!(
        fs::read_to_string(w.path().join("stats.txt")).unwrap(),
        stdout(&o)
    );
}

#[test]
fn train_evaluate_predict_round_trip() {
    let w = workspace();
    let o = ok(dialact(
        w.path(),
        &[
            "train", "--model", "lam", "--corpus", "c", "--config", "cfg.toml", "--seed", "7",
            "--out", "m",
        ],
    ));
    for f in [
        "model.dact",
        "best.dact",
        "model.cfg",
        "train.cfg",
        "vocab.txt",
        "labels.txt",
        "train.log",
    ] {
        assert!(w.path().join("m").join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(w.path().join("m/train.log")).unwrap();
    assert_eq!(log, stdout(&o));
    assert_eq!(log.lines().count(), 1 + 3);
    assert!(echoed_line(&o).contains("seed=7"));

    let o = ok(dialact(
        w.path(),
        &[
            "evaluate",
            "--model",
            "lam",
            "--checkpoint",
            "m/model.dact",
            "--corpus",
            "c",
            "--split",
            "test",
            "--out",
            "r",
        ],
    ));
    assert!(stdout(&o).contains("accuracy"));
    let tsv = fs::read_to_string(w.path().join("r/lam.test.tsv")).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("n\tall\tlam\t10")));
    assert!(w.path().join("r/lam.test.txt").is_file());

    let o = dialact(
        w.path(),
        &[
            "evaluate",
            "--model",
            "am",
            "--checkpoint",
            "m",
            "--corpus",
            "c",
            "--out",
            "r",
        ],
    );
    assert_eq!(o.status.code(), Some(1));

    ok(dialact(
        w.path(),
        &[
            "predict",
            "--checkpoint",
            "m",
            "--corpus",
            "c",
            "--out",
            "p.tsv",
        ],
    ));
    let preds = fs::read_to_string(w.path().join("p.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 10);
    for line in preds.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let total: f64 = f[4..].iter().map(|p| p.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    ok(dialact(
        w.path(),
        &[
            "report-singleword",
            "--checkpoint",
            "m",
            "--corpus",
            "c",
            "--classes",
            "STATEMENT,QUESTION",
            "--out",
            "r",
        ],
    ));
    let sw = fs::read_to_string(w.path().join("r/singleword.txt")).unwrap();
    assert!(sw.contains("DA-Right"));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let w = workspace();
    fs::write(w.path().join("cfg2.toml"), format!("{CONFIG}lr0 = 0.05\n")).unwrap();
    let first = ok(dialact(
        w.path(),
        &[
            "train",
            "--model",
            "lm",
            "--corpus",
            "c",
            "--config",
            "cfg2.toml",
            "--out",
            "m1",
        ],
    ));
    let line = echoed_line(&first).replace("--out m1", "--out m2");
    let args: Vec<&str> = line.split_whitespace().collect();
    let second = ok(dialact(w.path(), &args));
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(
        fs::read(w.path().join("m1/model.dact")).unwrap(),
        fs::read(w.path().join("m2/model.dact")).unwrap()
    );
    assert!(stdout(&first).contains("\t0.05\t"));
}

#[test]
fn config_comes_from_the_environment() {
    let w = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_dialact"))
        .current_dir(w.path())
        .env("DIALACT_CONFIG", "cfg.toml")
        .args([
            "train", "--model", "lm", "--corpus", "c", "--out", "m", "--set", "epochs=1",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let line = echoed_line(&o);
    assert!(line.contains("embed_dim=6") && line.contains("epochs=1"));
}

#[test]
fn extract_mfcc_writes_caches() {
    let w = workspace();
    ok(dialact(
        w.path(),
        &["extract-mfcc", "--input", "c", "--out", "mf"],
    ));
    let caches: Vec<_> = tree(&w.path().join("mf"));
    assert_eq!(caches.len(), 10);
    assert!(caches
        .iter()
        .all(|(p, b)| p.extension().is_some_and(|e| e == "mfcc") && b.starts_with(b"MFCC")));
    ok(dialact(
        w.path(),
        &[
            "extract-mfcc",
            "--input",
            "c/audio/test0000.wav",
            "--out",
            "one.mfcc",
        ],
    ));
    assert_eq!(
        fs::read(w.path().join("one.mfcc")).unwrap(),
        fs::read(w.path().join("mf/audio/test0000.mfcc")).unwrap()
    );
}

#[test]
fn ablation_writes_reports() {
    let w = workspace();
    let o = ok(dialact(
        w.path(),
        &[
            "ablate-qmark",
            "--corpus",
            "c",
            "--config",
            "cfg.toml",
            "--set",
            "epochs=1",
            "--out",
            "r",
        ],
    ));
    assert!(stdout(&o).contains("'?' removed"));
    let tsv = fs::read_to_string(w.path().join("r/ablation.tsv")).unwrap();
    assert!(tsv.contains("lm") && tsv.contains("lam"));
    let o = dialact(
        w.path(),
        &[
            "ablate-qmark",
            "--corpus",
            "c",
            "--question-label",
            "ASK",
            "--out",
            "r2",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn inputs_are_not_modified() {
    let w = workspace();
    let before = tree(&w.path().join("c"));
    ok(dialact(
        w.path(),
        &[
            "train", "--model", "am", "--corpus", "c", "--config", "cfg.toml", "--out", "m",
        ],
    ));
    ok(dialact(
        w.path(),
        &[
            "evaluate",
            "--checkpoint",
            "m",
            "--corpus",
            "c",
            "--out",
            "r",
        ],
    ));
    assert_eq!(before, tree(&w.path().join("c")));
}
