use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use pathosr_core::metrics::NiqeModel;
use pathosr_core::resample::synthesize_lr;
use pathosr_core::trainer::read_log;
use pathosr_core::{Image, LinearScale};
use serde_json::Value;

fn pathosr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathosr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Prepares the toy corpus and shrinks its schedule to six iterations.
fn prepare_small(dir: &Path) -> PathBuf {
    let out = pathosr(&["prepare", "--out", s(dir), "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let config = dir.join("config.json");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), config.to_str().unwrap());
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    cfg["train"]["total_iters"] = 6.into();
    cfg["train"]["checkpoint_interval"] = 3.into();
    cfg["train"]["batch_size"] = 2.into();
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    config
}

/// One trained run shared by the tests that only read from it.
fn trained() -> &'static Path {
    static RUN: OnceLock<PathBuf> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-trained");
        let _ = std::fs::remove_dir_all(&dir);
        let config = prepare_small(&dir);
        let out = pathosr(&["train", "--config", s(&config)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn train_writes_checkpoints_log_and_previews() {
    let run = trained().join("run");
    assert_eq!(files_in(&run.join("checkpoints")), ["iter-00000003.ckpt", "iter-00000006.ckpt"]);
    let log = read_log(&run.join("train_log.csv")).unwrap();
    assert_eq!(log.iter().map(|r| r.losses.iter).collect::<Vec<_>>(), [1, 2, 3, 4, 5, 6]);
    assert!(log.iter().all(|r| r.losses.j_recon.is_finite() && r.losses.j_t1.is_finite()));
    let samples = files_in(&run.join("samples"));
    assert_eq!(samples.len(), 4, "{samples:?}");
    assert!(run.join("config.json").is_file());
}

#[test]
fn resume_continues_from_the_latest_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepare_small(dir.path());
    let out = pathosr(&["train", "--config", s(&config), "--resume"]);
    assert_eq!(code(&out), 1, "resume without checkpoints is a usage error");

    assert_eq!(code(&pathosr(&["train", "--config", s(&config)])), 0);
    let run = dir.path().join("run");
    let full = read_log(&run.join("train_log.csv")).unwrap();
    std::fs::remove_file(run.join("checkpoints/iter-00000006.ckpt")).unwrap();
    let out = pathosr(&["train", "--config", s(&config), "--resume"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let resumed = read_log(&run.join("train_log.csv")).unwrap();
    assert_eq!(
        full.iter().map(|r| r.losses).collect::<Vec<_>>(),
        resumed.iter().map(|r| r.losses).collect::<Vec<_>>()
    );
}

/// LR versions of the two held-out smears, named like their HR files.
fn lr_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let hr_dir = trained().join("data");
    let lr_dir = dir.join("lr");
    std::fs::create_dir_all(&lr_dir).unwrap();
    for name in ["smear-0008.png", "smear-0009.png"] {
        let hr = Image::load(&hr_dir.join(name)).unwrap();
        synthesize_lr(&hr, LinearScale::new(2).unwrap()).unwrap().save(&lr_dir.join(name)).unwrap();
    }
    (lr_dir, hr_dir)
}

#[test]
fn infer_super_resolves_a_directory_with_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let (lr_dir, hr_dir) = lr_inputs(dir.path());
    let ckpt = trained().join("run/checkpoints/iter-00000006.ckpt");
    let out_dir = dir.path().join("sr");
    let out = pathosr(&[
        "infer", "--checkpoint", s(&ckpt), "--input", s(&lr_dir), "--out", s(&out_dir), "--compare", s(&hr_dir),
        "--scale", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["smear-0008.png", "smear-0009.png"] {
        let sr = Image::load(&out_dir.join(name)).unwrap();
        assert_eq!((sr.width(), sr.height()), (128, 128));
        let panel = Image::load(&out_dir.join("compare").join(name)).unwrap();
        assert!(panel.width() >= 3 * 128 && panel.height() > 128);
    }
}

#[test]
fn infer_skips_unreadable_inputs_with_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let (lr_dir, _) = lr_inputs(dir.path());
    std::fs::write(lr_dir.join("broken.png"), b"not an image").unwrap();
    let ckpt = trained().join("run/checkpoints/iter-00000006.ckpt");
    let out_dir = dir.path().join("sr");
    let out = pathosr(&["infer", "--checkpoint", s(&ckpt), "--input", s(&lr_dir), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 3);
    assert_eq!(files_in(&out_dir), ["smear-0008.png", "smear-0009.png"]);
}

#[test]
fn infer_rejects_a_scale_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (lr_dir, _) = lr_inputs(dir.path());
    let ckpt = trained().join("run/checkpoints/iter-00000006.ckpt");
    let out_dir = dir.path().join("sr");
    let out = pathosr(&[
        "infer", "--checkpoint", s(&ckpt), "--input", s(&lr_dir), "--out", s(&out_dir), "--scale", "4",
    ]);
    assert_eq!(code(&out), 1);
    assert!(!out_dir.exists());
}

fn report_bytes(run: &Path) -> Vec<(String, Vec<u8>)> {
    let dir = run.join("reports");
    files_in(&dir)
        .into_iter()
        .map(|n| {
            let bytes = std::fs::read(dir.join(&n)).unwrap();
            (n, bytes)
        })
        .collect()
}

#[test]
fn evaluate_is_reproducible_and_report_merges_methods() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained().join("config.json");
    let ckpt = trained().join("run/checkpoints/iter-00000006.ckpt");
    let methods = format!("nearest,bicubic,ckpt:{}", ckpt.display());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = pathosr(&["evaluate", "--config", s(&config), "--methods", &methods, "--out", s(out_dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let reports = report_bytes(&a);
    assert_eq!(reports, report_bytes(&b));
    assert_eq!(reports.iter().filter(|(n, _)| n.ends_with(".csv")).count(), 3);
    assert!(reports.iter().any(|(n, _)| n == "table-x4.md"));

    let out = pathosr(&["report", "--out", s(&a)]);
    assert_eq!(code(&out), 0);
    let summary = std::fs::read_to_string(a.join("reports/summary.md")).unwrap();
    let header = summary.lines().next().unwrap();
    assert!(header.starts_with("| toy (4x) | Nearest | Bicubic |"), "{header}");
    assert!(summary.contains("PSNR") && summary.contains("SSIM") && summary.contains("NIQE"));
}

#[test]
fn evaluate_reports_partial_failure_for_a_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained().join("config.json");
    let out = pathosr(&[
        "evaluate", "--config", s(&config), "--methods", "bicubic,ckpt:/nonexistent.ckpt", "--out", s(dir.path()),
    ]);
    assert_eq!(code(&out), 3);
    assert_eq!(files_in(&dir.path().join("reports")), ["bicubic-x4.csv", "bicubic-x4.json", "table-x4.md"]);
}

#[test]
fn evaluate_without_test_records_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = prepare_small(dir.path());
    let manifest = dir.path().join("data/manifest.jsonl");
    let kept: Vec<String> = std::fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"train\""))
        .map(str::to_owned)
        .collect();
    std::fs::write(&manifest, kept.join("\n")).unwrap();
    let out = pathosr(&["evaluate", "--config", s(&config)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&pathosr(&[])), 1);
    assert_eq!(code(&pathosr(&["frobnicate"])), 1);
    assert_eq!(code(&pathosr(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pathosr(&["prepare", "--out", s(dir.path()), "--scale", "5"])), 1);
    assert_eq!(code(&pathosr(&["train", "--config", s(&dir.path().join("missing.json"))])), 1);

    let config = prepare_small(dir.path());
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    cfg["learning_rate"] = 1.0.into();
    std::fs::write(&config, cfg.to_string()).unwrap();
    assert_eq!(code(&pathosr(&["train", "--config", s(&config)])), 1);
    assert_eq!(code(&pathosr(&["evaluate", "--config", s(&config), "--methods", "lanczos"])), 1);
    assert_eq!(code(&pathosr(&["report", "--out", s(&dir.path().join("nowhere"))])), 1);
}

#[test]
fn prepare_defaults_to_the_cache_directory() {
    let cache = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pathosr"))
        .args(["prepare", "--seed", "9", "--scale", "3"])
        .env(pathosr_cli::CACHE_ENV, cache.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let config = cache.path().join("toy-seed9/config.json");
    let cfg = pathosr_cli::RunConfig::load(&config).unwrap();
    assert_eq!(cfg.train.linear_scale.get(), 3);
    assert!(cfg.manifest.is_file());
}

#[test]
fn niqe_fit_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.bin");
    let input = trained().join("data");
    let out = pathosr(&["niqe-fit", "--input", s(&input), "--out", s(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(NiqeModel::load(&model).unwrap().dim(), 36);
}
