//! End-to-end checks of the command-line interface and its exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gan-introspect"))
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.json");
    std::fs::write(
        &path,
        r#"{
  "generator": {"q_features": 8, "base_channels": 1, "repeat_blocks": 2, "n_domains": 2, "seed": 1},
  "train": {"total_iterations": 8, "checkpoint_every": 4, "batch_size": 2, "crop_frames": 16,
            "lr_g": 1e-4, "lr_d": 1e-4, "beta1": 0.5, "beta2": 0.999, "adam_eps": 1e-8,
            "lambda_cyc": 10.0, "lambda_id": 5.0, "id_cutoff_iterations": 2, "seed": 2},
  "dataset": {"n_domains": 2, "sentences_per_domain": 4, "q": 8, "t_min": 24, "t_max": 40, "seed": 3},
  "seeds": [1],
  "probe_sequences": 2
}"#,
    )
    .unwrap();
    path
}

#[test]
fn train_writes_checkpoints_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("ckpt_000004.gick").exists());
    assert!(out.join("ckpt_000008.gick").exists());
    let log = std::fs::read_to_string(out.join("trainlog.csv")).unwrap();
    assert!(log.starts_with("iteration,adv_g,adv_d,cyc,id,total_g,total_d,grad_norm_max"));
    assert_eq!(log.lines().count(), 9, "header plus one row per iteration");
}

#[test]
fn exp1_emits_parseable_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("exp1");
    let status = bin()
        .args(["exp1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("exp1_seed1.csv")).unwrap();
    let report = gan_introspect::experiments::parse_report_csv(&text).unwrap();
    // 2 checkpoints x (10 layers + 3 group rows)
    assert_eq!(report.rows.len(), 2 * 13);
    for row in &report.rows {
        assert!((0.0..=1.0 + 1e-9).contains(&row.similarity));
    }
}

#[test]
fn svcca_subcommand_compares_amat_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = gan_introspect::svcca::ActivationMatrix::new(
        "R1",
        4,
        64,
        (0..256).map(|v| ((v * 7 + 3) % 23) as f64 * 0.1).collect(),
        0,
    )
    .unwrap();
    let path_a = dir.path().join("a.amat");
    gan_introspect::dataio::write_amat(&m, &path_a).unwrap();
    let output = bin()
        .args(["svcca", "--a"])
        .arg(&path_a)
        .arg("--b")
        .arg(&path_a)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let mean_line = text
        .lines()
        .find(|l| l.starts_with("mean similarity"))
        .expect("mean similarity line");
    // a matrix against itself scores 1
    assert!(mean_line.contains("1.000000"), "got {:?}", mean_line);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"total_iterations": 10, "checkpoint_every": 3,
        "batch_size": 1, "crop_frames": 16, "lr_g": 1e-4, "lr_d": 1e-4, "beta1": 0.5,
        "beta2": 0.999, "adam_eps": 1e-8, "lambda_cyc": 10.0, "lambda_id": 5.0,
        "id_cutoff_iterations": 1, "seed": 1}}"#).unwrap();
    let status = bin()
        .args(["train", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn corrupt_amat_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.amat");
    std::fs::write(&path, b"AMATgarbage").unwrap();
    let status = bin()
        .args(["svcca", "--a"])
        .arg(&path)
        .arg("--b")
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
