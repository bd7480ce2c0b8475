use std::fs;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use ubp_cli::manifest::{parse_run_manifest, Status};

const TINY: &str = r#"
subjects = 10
folds = 5
[generator]
duration_seconds = 6.0
sessions_min = 1
sessions_max = 2
block_grid = { rows = 2, cols = 2 }
[train]
epochs = 2
batch_size = 16
mc_samples = 3
samples_per_video = { rppg = 3, ppg = 2, img = 2 }
"#;

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn ubp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubp"))
        .arg("--workdir")
        .arg(dir)
        .args(["--config", "tiny.toml"])
        .args(args)
        .env_remove("UBP_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ubp(dir, args);
    assert!(
        out.status.success(),
        "ubp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn checkpoints(dir: &Path) -> usize {
    fs::read_dir(dir.join("run/checkpoints"))
        .map(|d| d.filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "bin").count())
        .unwrap_or(0)
}

#[test]
fn synth_is_deterministic_and_validates_subject_count() {
    let (a, b) = (workdir(), workdir());
    ok(a.path(), &["--seed", "7", "synth"]);
    ok(b.path(), &["--seed", "7", "synth"]);
    let manifest = |d: &Path| fs::read_to_string(d.join("dataset/manifest.json")).unwrap();
    assert_eq!(manifest(a.path()), manifest(b.path()));
    assert!(a.path().join("dataset/synth-config.json").exists());

    let c = workdir();
    let out = Command::new(env!("CARGO_BIN_EXE_ubp"))
        .arg("--workdir")
        .arg(c.path())
        .args(["--config", "tiny.toml", "synth"])
        .env("UBP_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(a.path()), manifest(c.path()));

    let out = ubp(a.path(), &["synth", "--subjects", "2"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = workdir();
    fs::write(dir.path().join("bad.toml"), "subjects = 10\nlearning_rate = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ubp"))
        .arg("--workdir")
        .arg(dir.path())
        .args(["--config", "bad.toml", "synth"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"));
    assert_eq!(code(&ubp(dir.path(), &["train", "--modalities", "ecg"])), 2);
}

#[test]
fn missing_inputs_exit_with_3() {
    let dir = workdir();
    let out = ubp(dir.path(), &["train"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("manifest.json"));
    assert_eq!(code(&ubp(dir.path(), &["eval"])), 3);
    assert_eq!(code(&ubp(dir.path(), &["report"])), 3);
    let out = Command::new(env!("CARGO_BIN_EXE_ubp"))
        .arg("--workdir")
        .arg(dir.path())
        .args(["--config", "nope.toml", "synth"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}

#[test]
fn full_pipeline_outputs_and_idempotence() {
    let dir = workdir();
    let d = dir.path();
    ok(d, &["--seed", "5", "synth"]);
    ok(d, &["--seed", "5", "train"]);
    assert_eq!(checkpoints(d), 15);
    let manifest = parse_run_manifest(&fs::read_to_string(d.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(manifest.status, Status::Complete);
    assert_eq!(manifest.jobs.len(), 15);
    assert!(manifest.jobs.iter().all(|j| j.epochs.len() == 2 && j.best_epoch.is_some()));
    assert!(d.join("run/train-config.json").exists());

    ok(d, &["--seed", "5", "eval"]);
    let eval = d.join("run/eval");
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    for target in ["sbp", "dbp"] {
        for method in ["rppg", "ppg", "img", "mean-fuse", "uda-fuse"] {
            assert!(metrics.contains(&format!("all,{target},{method},")), "{target} {method}");
        }
    }
    let csvs = ["metrics.csv", "fusion.csv", "curve_sbp.csv", "curve_dbp.csv", "subgroups_sbp.csv", "subgroups_dbp.csv"];
    let snapshot = || csvs.map(|f| fs::read(eval.join(f)).unwrap());
    let first = snapshot();
    ok(d, &["--seed", "5", "eval"]);
    assert_eq!(first, snapshot());

    let report = ok(d, &["report"]);
    assert!(String::from_utf8_lossy(&report.stdout).contains("uda-fuse"));

    // Plots only: delete them and the fusion table's neighbours stay untouched.
    let svg = eval.join("scatter_sbp_uda-fuse.svg");
    let before = fs::read(&svg).unwrap();
    fs::remove_file(&svg).unwrap();
    fs::remove_file(eval.join("curve_dbp.svg")).unwrap();
    ok(d, &["eval", "--report-only"]);
    assert_eq!(fs::read(&svg).unwrap(), before);
    assert!(eval.join("curve_dbp.svg").exists());
    assert_eq!(first, snapshot());

    // A second workdir with the same seed reproduces the tables byte for byte.
    let other = workdir();
    for cmd in ["synth", "train", "eval"] {
        ok(other.path(), &["--seed", "5", cmd]);
    }
    assert_eq!(first, csvs.map(|f| fs::read(other.path().join("run/eval").join(f)).unwrap()));

    // Fine-tuning from the run just trained.
    ok(d, &["--seed", "5", "train", "--init-from", "run", "--modalities", "img", "--epochs", "1"]);
    let tuned = parse_run_manifest(&fs::read_to_string(d.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(tuned.init_from.as_deref(), Some("run"));
    assert!(tuned.jobs.iter().all(|j| j.epochs[0].learning_rate == 1e-4));
}

#[test]
fn eval_reports_missing_and_corrupted_checkpoints() {
    let dir = workdir();
    let d = dir.path();
    ok(d, &["synth"]);
    ok(d, &["train", "--modalities", "rppg"]);
    assert_eq!(checkpoints(d), 5);
    let out = ubp(d, &["eval"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("fold0_ppg"), "{}", stderr(&out));

    ok(d, &["train"]);
    let bin = d.join("run/checkpoints/fold2_img.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes[3] ^= 0x40;
    fs::write(&bin, bytes).unwrap();
    let out = ubp(d, &["eval"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("fold2_img"), "{}", stderr(&out));
    assert!(stderr(&out).contains("integrity"), "{}", stderr(&out));

    let out = ubp(d, &["train", "--init-from", "missing-run"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn divergence_exits_with_4() {
    let dir = workdir();
    let d = dir.path();
    ok(d, &["synth"]);
    let cfg = format!("{TINY}learning_rates = {{ rppg = 1e100, ppg = 1e100, img = 1e100 }}\n");
    fs::write(d.join("tiny.toml"), cfg).unwrap();
    let out = ubp(d, &["train", "--modalities", "img", "--epochs", "20"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let manifest = parse_run_manifest(&fs::read_to_string(d.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(manifest.status, Status::Incomplete);
}

#[test]
fn interrupted_training_is_marked_incomplete() {
    let dir = workdir();
    let d = dir.path();
    ok(d, &["synth"]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_ubp"))
        .arg("--workdir")
        .arg(d)
        .args(["--config", "tiny.toml", "train", "--epochs", "5000"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let manifest_path = d.join("run/run.json");
    let start = Instant::now();
    while !manifest_path.exists() {
        assert!(start.elapsed() < Duration::from_secs(60), "training never wrote a manifest");
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let manifest = parse_run_manifest(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest.status, Status::Incomplete);
    let done = manifest.jobs.iter().filter(|j| j.status == Status::Complete).count();
    assert!(done < manifest.jobs.len());
    assert!(done <= checkpoints(d));
    assert_eq!(code(&ubp(d, &["eval"])), 3);
}
