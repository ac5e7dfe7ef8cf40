use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use decnn::data_io::Report;

fn decnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = decnn(args);
    assert!(
        out.status.success(),
        "decnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic run that needs no dataset files.
const TINY_SYNTHETIC: &str = r#"{
  "train": {
    "objective": "redecnn",
    "epochs": 2,
    "batch_size": 32,
    "learning_rate": 0.001,
    "depth": 2,
    "arch": {"input_dim": 256, "blocks": 2, "hidden": 16, "classes": 2, "decoder_hidden": 32}
  },
  "data": {"dataset": "synthetic", "synthetic_train": 200, "synthetic_test": 120},
  "eval": {"samples": 5}
}"#;

fn mnist_root() -> Option<PathBuf> {
    let root = std::env::var_os("DECNN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/data"));
    root.join("mnist/t10k-images-idx3-ubyte").is_file().then_some(root)
}

#[test]
fn unknown_key_fails_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"train": {"arch": {"blokcs": 3}}}"#);
    let out = decnn(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.arch.blokcs"), "{err}");
}

#[test]
fn rerun_from_resolved_config_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_SYNTHETIC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&a), "--seed", "7"]);
    let resolved = a.join("resolved_config.json");
    run_ok(&["train", "--config", s(&resolved), "--out", s(&b)]);
    for f in ["checkpoint.bin", "metrics.log", "resolved_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let log = Report::read(a.join("metrics.log")).unwrap();
    assert_eq!(log.kind, "epochs");
    assert_eq!(log.records.len(), 2);

    // Evaluation is deterministic as well.
    let ck = a.join("checkpoint.bin");
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    for e in [&e1, &e2] {
        run_ok(&["eval", "--checkpoint", s(&ck), "--experiment", "misclassification", "--out", s(e)]);
    }
    let r1 = fs::read(e1.join("misclassification.log")).unwrap();
    assert_eq!(r1, fs::read(e2.join("misclassification.log")).unwrap());
    let r = Report::parse(std::str::from_utf8(&r1).unwrap()).unwrap();
    let auc = r.get_f64(0, "auc").unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn ood_without_outlier_source_names_the_requirement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY_SYNTHETIC);
    let t = dir.path().join("t");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&t)]);
    let out = decnn(&[
        "eval",
        "--checkpoint",
        s(&t.join("checkpoint.bin")),
        "--experiment",
        "ood",
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval.ood_source"));

    let out = decnn(&["eval", "--checkpoint", s(&t.join("checkpoint.bin")), "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval.experiment"));
}

#[test]
fn corruption_ood_and_fairness_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &TINY_SYNTHETIC.replace(
            r#""eval": {"samples": 5}"#,
            r#""eval": {"samples": 5, "ood_source": "corruptions",
                "corruptions": [{"kind": "stripe", "rows": 4}, {"kind": "rotate", "degrees": 90.0}]}"#,
        ),
    );
    let t = dir.path().join("t");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&t)]);
    let ck = t.join("checkpoint.bin");
    let e = dir.path().join("e");
    run_ok(&["eval", "--checkpoint", s(&ck), "--experiment", "ood", "--out", s(&e)]);
    let r = Report::read(e.join("ood.log")).unwrap();
    assert_eq!(r.records.len(), 2);

    run_ok(&["eval", "--checkpoint", s(&ck), "--experiment", "fairness", "--out", s(&e)]);
    let r = Report::read(e.join("fairness.log")).unwrap();
    assert_eq!(r.get(2, "group"), Some("gap"));

    run_ok(&["eval", "--checkpoint", s(&ck), "--checkpoint", s(&ck), "--experiment", "calibration", "--out", s(&e)]);
    let r = Report::read(e.join("calibration.log")).unwrap();
    assert_eq!(r.records.len(), 2);
    assert!(e.join("calibration_bins.log").is_file());
}

#[test]
fn fairness_training_and_ensemble_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &TINY_SYNTHETIC
            .replace(r#""objective": "redecnn""#, r#""objective": "fairness""#)
            .replace(r#""eval": {"#, r#""pretrained": {"target": "cue", "epochs": 1}, "eval": {"sampler": "ensemble_members", "#),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]);
    run_ok(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]);
    let log = Report::read(a.join("metrics.log")).unwrap();
    assert_ne!(log.get(0, "aux"), Some("none"));
    let e = dir.path().join("e");
    run_ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&a.join("checkpoint.bin")),
        "--checkpoint",
        s(&b.join("checkpoint.bin")),
        "--experiment",
        "misclassification",
        "--out",
        s(&e),
    ]);
    assert!(Report::read(e.join("misclassification.log")).is_ok());
}

#[test]
fn untrained_mnist_net_is_at_chance_and_probe_exports_2n_grids() {
    let Some(root) = mnist_root() else {
        eprintln!("skipped: MNIST not found (set DECNN_DATA_DIR)");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"train": {{"objective": "standard", "epochs": 1, "learning_rate": 0.0}},
                "data": {{"root": {:?}, "train_examples": 256}}}}"#,
            root.to_str().unwrap()
        ),
    );
    let t = dir.path().join("t");
    run_ok(&["train", "--config", s(&cfg), "--out", s(&t)]);
    let ck = t.join("checkpoint.bin");
    let e = dir.path().join("e");
    run_ok(&["eval", "--checkpoint", s(&ck), "--experiment", "accuracy", "--out", s(&e)]);
    let acc = Report::read(e.join("accuracy.log")).unwrap().get_f64(0, "accuracy").unwrap();
    assert!((acc - 0.1).abs() < 0.03, "untrained accuracy {acc}");

    let p = dir.path().join("p");
    run_ok(&["probe", "--checkpoint", s(&ck), "--n", "3", "--out", s(&p)]);
    let grids: Vec<_> = fs::read_dir(&p)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "pgm"))
        .collect();
    assert_eq!(grids.len(), 6);
    let img = decnn::data_io::read_pgm(grids[0].path()).unwrap();
    assert_eq!((img.width, img.height), (9 * 28, 28));
}
