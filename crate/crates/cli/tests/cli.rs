//! End-to-end tests of the `spoofband` binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spoofband"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_extract_shapes_and_failure_exit() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let feats = dir.path().join("feats");
    run_ok(&["synth-corpus", "--out-dir", p(&corpus), "--n-per-class", "3", "--seed", "9"]);
    let protocol = corpus.join("protocol.txt");
    let stdout = run_ok(&[
        "extract",
        "--protocol",
        p(&protocol),
        "--audio-dir",
        p(&corpus),
        "--out-dir",
        p(&feats),
        "--kind",
        "lps",
        "--band",
        "f0",
        "--jobs",
        "2",
    ]);
    assert!(stdout.contains("6/6"), "{stdout}");
    assert!(stdout.contains("45x600"), "{stdout}");
    assert_eq!(std::fs::read_dir(&feats).unwrap().count(), 6);

    // delete one audio file: extraction must report it and exit nonzero
    std::fs::remove_file(corpus.join("SY_B_00001.wav")).unwrap();
    let out = run(&[
        "extract",
        "--protocol",
        p(&protocol),
        "--audio-dir",
        p(&corpus),
        "--out-dir",
        p(&feats),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("SY_B_00001"), "{stderr}");
}

#[test]
fn real_high_shape() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let feats = dir.path().join("feats");
    run_ok(&["synth-corpus", "--out-dir", p(&corpus), "--n-per-class", "1", "--seed", "1"]);
    let stdout = run_ok(&[
        "extract",
        "--protocol",
        p(&corpus.join("protocol.txt")),
        "--audio-dir",
        p(&corpus),
        "--out-dir",
        p(&feats),
        "--kind",
        "real",
        "--band",
        "high",
    ]);
    assert!(stdout.contains("432x600"), "{stdout}");
}

#[test]
fn fuse_chain_matches_closed_form_and_rejects_bad_weight() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, rows: &[(&str, f64)]| {
        let body: String = rows
            .iter()
            .map(|(id, s)| format!("{id}\t{s:.16e}\n"))
            .collect();
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        path
    };
    let a = write("a.txt", &[("x", -1.0), ("y", 2.0)]);
    let b = write("b.txt", &[("x", 3.0), ("y", -0.5)]);
    let c = write("c.txt", &[("x", 0.25), ("y", 1.5)]);
    let q1 = dir.path().join("q1.txt");
    let q2 = dir.path().join("q2.txt");
    run_ok(&["fuse", "--a", p(&a), "--b", p(&b), "--weight", "0.5", "--out", p(&q1)]);
    run_ok(&["fuse", "--a", p(&q1), "--b", p(&c), "--weight", "0.5", "--out", p(&q2)]);
    let text = std::fs::read_to_string(&q2).unwrap();
    for (id, sa, sb, sc) in [("x", -1.0f64, 3.0, 0.25), ("y", 2.0, -0.5, 1.5)] {
        let want = (0.25 * sa + 0.25 * sb) + 0.5 * sc;
        let line = text.lines().find(|l| l.starts_with(id)).unwrap();
        let got: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(got.to_bits(), want.to_bits(), "{id}");
    }
    let out = run(&["fuse", "--a", p(&a), "--b", p(&b), "--weight", "1.5", "--out", p(&q1)]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_toy_scores() {
    let dir = tempfile::tempdir().unwrap();
    let protocol = dir.path().join("protocol.txt");
    std::fs::write(
        &protocol,
        "s1 b1 - - bonafide\ns1 b2 - - bonafide\ns2 s1 - A01 spoof\ns2 s2 - A01 spoof\n",
    )
    .unwrap();
    let write_scores = |name: &str, rows: &[(&str, f64)]| {
        let body: String = rows
            .iter()
            .map(|(id, s)| format!("{id}\t{s:.16e}\n"))
            .collect();
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        path
    };
    // perfectly separated
    let good = write_scores("good.txt", &[("b1", 3.0), ("b2", 2.0), ("s1", -1.0), ("s2", -2.0)]);
    let stdout = run_ok(&["evaluate", "--scores", p(&good), "--protocol", p(&protocol)]);
    assert!(stdout.contains("EER 0.00%"), "{stdout}");

    // identical distributions
    let flat = write_scores("flat.txt", &[("b1", 1.0), ("b2", 0.0), ("s1", 1.0), ("s2", 0.0)]);
    let stdout = run_ok(&["evaluate", "--scores", p(&flat), "--protocol", p(&protocol)]);
    assert!(stdout.contains("EER 50.00%"), "{stdout}");

    // json format and DET export
    let det = dir.path().join("det.csv");
    let stdout = run_ok(&[
        "evaluate",
        "--scores",
        p(&good),
        "--protocol",
        p(&protocol),
        "--format",
        "json",
        "--det-out",
        p(&det),
    ]);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v["eer"], 0.0);
    assert_eq!(v["n_trials"], 4);
    let det_text = std::fs::read_to_string(&det).unwrap();
    assert!(det_text.starts_with("threshold,far,frr\n"), "{det_text}");
    assert!(det_text.lines().count() > 2);
}

#[test]
fn f0_hist_split_by_label() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    run_ok(&["synth-corpus", "--out-dir", p(&corpus), "--n-per-class", "2", "--seed", "4"]);
    let out = dir.path().join("hist.csv");
    run_ok(&[
        "f0-hist",
        "--protocol",
        p(&corpus.join("protocol.txt")),
        "--audio-dir",
        p(&corpus),
        "--out",
        p(&out),
        "--split-by-label",
    ]);
    for label in ["bonafide", "spoof"] {
        let path = dir.path().join(format!("hist.{label}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("bin_start_hz,bin_end_hz,count\n"), "{label}: {text}");
        assert_eq!(text.lines().count(), 101, "{label}: 100 bins + header");
    }
}

#[test]
fn train_score_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let feats = dir.path().join("feats");
    run_ok(&["synth-corpus", "--out-dir", p(&corpus), "--n-per-class", "3", "--seed", "2"]);
    let protocol = corpus.join("protocol.txt");
    run_ok(&[
        "extract",
        "--protocol",
        p(&protocol),
        "--audio-dir",
        p(&corpus),
        "--out-dir",
        p(&feats),
    ]);
    let ckpt = dir.path().join("model.sbck");
    let log1 = dir.path().join("log1.csv");
    let log2 = dir.path().join("log2.csv");
    let train_args = |log: &Path, ck: &Path| {
        vec![
            "train".to_string(),
            "--features-dir".into(),
            p(&feats).into(),
            "--protocol-train".into(),
            p(&protocol).into(),
            "--protocol-dev".into(),
            p(&protocol).into(),
            "--checkpoint-out".into(),
            p(ck).into(),
            "--log-out".into(),
            p(log).into(),
            "--epochs".into(),
            "2".into(),
            "--width-multiplier".into(),
            "0.25".into(),
            "--seed".into(),
            "6".into(),
        ]
    };
    let args1 = train_args(&log1, &ckpt);
    let v1: Vec<&str> = args1.iter().map(String::as_str).collect();
    run_ok(&v1);
    let ckpt2 = dir.path().join("model2.sbck");
    let args2 = train_args(&log2, &ckpt2);
    let v2: Vec<&str> = args2.iter().map(String::as_str).collect();
    run_ok(&v2);
    assert_eq!(
        std::fs::read_to_string(&log1).unwrap(),
        std::fs::read_to_string(&log2).unwrap(),
        "same seed must give identical logs"
    );
    let log_text = std::fs::read_to_string(&log1).unwrap();
    assert!(log_text.starts_with("epoch,train_loss,dev_eer,lambda\n"));
    assert_eq!(log_text.lines().count(), 3);

    let scores = dir.path().join("scores.txt");
    run_ok(&[
        "score",
        "--checkpoint",
        p(&ckpt),
        "--features-dir",
        p(&feats),
        "--protocol",
        p(&protocol),
        "--out",
        p(&scores),
    ]);
    let text = std::fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().count(), 6);
    // epochs=0 rejected
    let out = run(&[
        "train",
        "--features-dir",
        p(&feats),
        "--protocol-train",
        p(&protocol),
        "--protocol-dev",
        p(&protocol),
        "--checkpoint-out",
        p(&ckpt),
        "--epochs",
        "0",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"), "stderr should name epochs");
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let feats = dir.path().join("feats");
    run_ok(&["synth-corpus", "--out-dir", p(&corpus), "--n-per-class", "1", "--seed", "3"]);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# extraction defaults\nkind=imag\nband=low\nprotocol={}\naudio-dir={}\n",
            corpus.join("protocol.txt").display(),
            corpus.display()
        ),
    )
    .unwrap();
    // config alone: imag/low -> 433 rows
    let stdout = run_ok(&["extract", "--config", p(&cfg), "--out-dir", p(&feats)]);
    assert!(stdout.contains("433x600"), "{stdout}");
    // explicit flag overrides the config value
    let stdout = run_ok(&[
        "extract",
        "--config",
        p(&cfg),
        "--out-dir",
        p(&feats),
        "--band",
        "f0",
    ]);
    assert!(stdout.contains("45x600"), "{stdout}");
}
