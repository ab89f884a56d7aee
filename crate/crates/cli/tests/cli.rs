use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn pulsenet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsenet"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--data-dir")
        .arg(data_dir())
        .output()
        .expect("failed to launch pulsenet")
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

const SMALL: &[&str] = &[
    "--encode-layers",
    "3",
    "--infer-layers",
    "3",
    "--subset",
    "96",
    "--val-subset",
    "40",
    "--epochs",
    "2",
];

fn train_small(out: &Path, extra: &[&str]) {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    assert_ok(&pulsenet(out, &args));
}

#[test]
fn gradcheck_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gc.toml");
    fs::write(&cfg, "[gradcheck]\ninstances = 3\ninput_dim = 4\n").unwrap();
    let o = pulsenet(
        dir.path(),
        &[
            "gradcheck",
            "--config",
            cfg.to_str().unwrap(),
            "--encode-layers",
            "2",
            "--infer-layers",
            "3",
        ],
    );
    assert_ok(&o);
    let csv = fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok"));
}

#[test]
fn gradcheck_fails_loudly_on_impossible_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gc.toml");
    fs::write(&cfg, "[gradcheck]\ninstances = 2\ninput_dim = 3\ntolerance = 0.0\n").unwrap();
    let o = pulsenet(
        dir.path(),
        &[
            "gradcheck",
            "--config",
            cfg.to_str().unwrap(),
            "--encode-layers",
            "1",
            "--infer-layers",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_is_reproducible_across_runs_and_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train_small(a.path(), &["--seed", "9", "--workers", "1"]);
    train_small(b.path(), &["--seed", "9", "--workers", "3"]);
    for f in ["iterations.csv", "epochs.csv", "confusion.csv", "model.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let other = tempfile::tempdir().unwrap();
    train_small(other.path(), &["--seed", "10"]);
    assert_ne!(
        fs::read(a.path().join("iterations.csv")).unwrap(),
        fs::read(other.path().join("iterations.csv")).unwrap()
    );
}

#[test]
fn snapshot_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    train_small(a.path(), &["--seed", "3", "--lr", "0.005"]);
    let snapshot = a.path().join("config.toml");
    let text = fs::read_to_string(&snapshot).unwrap();
    assert!(text.contains("learning_rate = 0.005"));
    let b = tempfile::tempdir().unwrap();
    assert_ok(&pulsenet(b.path(), &["train", "--config", snapshot.to_str().unwrap()]));
    for f in ["iterations.csv", "epochs.csv", "confusion.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn eval_and_inspect_pulse_read_the_trained_checkpoint() {
    let run = tempfile::tempdir().unwrap();
    train_small(run.path(), &[]);
    let ck = run.path().join("model.json");

    let ev = tempfile::tempdir().unwrap();
    assert_ok(&pulsenet(
        ev.path(),
        &["eval", "--checkpoint", ck.to_str().unwrap(), "--val-subset", "40"],
    ));
    assert_eq!(
        fs::read(run.path().join("confusion.csv")).unwrap(),
        fs::read(ev.path().join("confusion.csv")).unwrap()
    );

    let ip = tempfile::tempdir().unwrap();
    assert_ok(&pulsenet(
        ip.path(),
        &["inspect-pulse", "--checkpoint", ck.to_str().unwrap(), "--sample", "5"],
    ));
    let csv = fs::read_to_string(ip.path().join("pulse-5.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 3 + 6));
    let flags: Vec<&str> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(flags, ["1", "1", "1", "0", "0", "0"]);
    for r in &rows {
        for v in &r[3..] {
            assert!(v.parse::<f64>().unwrap().abs() <= 25.0);
        }
    }
}

#[test]
fn noise_sweep_and_ablate_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[noise]\neval_deltas = [0.0, 4.0]\nrepetitions = 2\n[ablation]\nvariants = [\"joint\", \"linear-clipped\"]\nseeds = [1]\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut args = vec!["noise-sweep", "--config", cfg, "--delta", "4"];
    args.extend_from_slice(SMALL);
    assert_ok(&pulsenet(dir.path(), &args));
    let sweep = fs::read_to_string(dir.path().join("noise_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(dir.path().join("clean.json").exists() && dir.path().join("noisy.json").exists());

    let mut args = vec!["ablate", "--config", cfg, "--epochs", "1"];
    args.extend_from_slice(&SMALL[..8]);
    assert_ok(&pulsenet(dir.path(), &args));
    let table = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let variants: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["joint", "linear-clipped"]);
}

#[test]
fn noise_sweep_requires_a_training_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let o = pulsenet(dir.path(), &["noise-sweep"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--delta"));
}

#[test]
fn bad_configuration_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[model]\nqubits = 2\n").unwrap();
    let o = pulsenet(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = pulsenet(dir.path(), &["train", "--method", "newton"]);
    assert!(!o.status.success());

    let o = Command::new(env!("CARGO_BIN_EXE_pulsenet"))
        .args(["train", "--data-dir", "/nonexistent", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent"));
}
