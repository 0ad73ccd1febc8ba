use std::path::Path;

use pathosr_core::data::synthetic::toy_pairs;
use pathosr_core::data::{Dataset, RoiConfig};
use pathosr_core::losses::LossWeights;
use pathosr_core::model::{CriticSpec, GeneratorSpec};
use pathosr_core::trainer::{
    fit, latest_checkpoint, load_checkpoint, read_log, save_checkpoint, CheckpointError, FitOptions, Seeds, Stage,
    TrainConfig, Trainer, Variant,
};
use pathosr_core::{Error, LinearScale};

fn scale() -> LinearScale {
    LinearScale::new(2).unwrap()
}

fn dataset() -> Dataset {
    let pairs = toy_pairs(4, 0, 32, 5, scale()).unwrap();
    Dataset::from_pairs(pairs, scale(), 16).unwrap()
}

fn config(variant: Variant, total_iters: u64) -> TrainConfig {
    TrainConfig {
        total_iters,
        base_lr: 1e-3,
        batch_size: 2,
        linear_scale: scale(),
        loss: LossWeights {
            eta: 1.0,
            lambda_t1: 1e-4,
            lambda_t2: 1e-4,
            ..Default::default()
        },
        seeds: Seeds::from_master(1),
        checkpoint_interval: 3,
        variant,
        crop_size: None,
        roi: RoiConfig {
            patch_size: 16,
            coverage_threshold: 0.0,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn trainer(cfg: TrainConfig) -> Trainer<f32> {
    Trainer::new(
        cfg,
        GeneratorSpec {
            n_rrdb_blocks: 1,
            base_channels: 8,
            growth_channels: 4,
            linear_scale: scale(),
            ..Default::default()
        },
        CriticSpec::vgg_style(32, 4),
        CriticSpec::vgg_style(16, 4),
        None,
    )
    .unwrap()
}

fn stages_of(cfg: TrainConfig, steps: usize) -> Vec<Vec<Stage>> {
    let data = dataset();
    let mut t = trainer(cfg);
    (0..steps)
        .map(|_| {
            let batch = t.next_batch(&data).unwrap();
            t.train_step(&batch).unwrap().stages
        })
        .collect()
}

#[test]
fn stages_follow_the_variant() {
    use Stage::*;
    let expected = [
        (Variant::Srnet, vec![Recon]),
        (Variant::SrnetW, vec![Recon]),
        (Variant::T1, vec![Recon, CriticWhole, Adversarial]),
        (Variant::T1T2, vec![Recon, CriticWhole, CriticRoi, Adversarial]),
    ];
    for (variant, stages) in expected {
        for ran in stages_of(config(variant, 10), 2) {
            assert_eq!(ran, stages, "{variant:?}");
        }
    }
}

#[test]
fn pretraining_defers_adversarial_stages() {
    let cfg = TrainConfig {
        pretrain_iters: 2,
        ..config(Variant::T1T2, 10)
    };
    let ran = stages_of(cfg, 4);
    assert_eq!(ran[0], vec![Stage::Recon]);
    assert_eq!(ran[1], vec![Stage::Recon]);
    assert!(ran[2].contains(&Stage::Adversarial));
    assert!(ran[3].contains(&Stage::CriticWhole));
}

#[test]
fn reconstruction_only_training_reduces_loss() {
    let data = dataset();
    let mut t = trainer(config(Variant::Srnet, 200));
    let mut recon = Vec::new();
    for _ in 0..200 {
        let batch = t.next_batch(&data).unwrap();
        let l = t.train_step(&batch).unwrap().losses;
        assert_eq!((l.j_t1, l.j_t2, l.j_adv), (0.0, 0.0, 0.0));
        recon.push(l.j_recon);
    }
    let first: f64 = recon[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = recon[190..].iter().sum::<f64>() / 10.0;
    assert!(last <= 0.7 * first, "first {first}, last {last}");
}

#[test]
fn checkpoint_round_trip_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset();
    let mut a = trainer(config(Variant::T1T2, 10));
    for _ in 0..3 {
        let batch = a.next_batch(&data).unwrap();
        a.train_step(&batch).unwrap();
    }
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&a.checkpoint(), &path).unwrap();
    let mut b = Trainer::from_checkpoint(load_checkpoint::<f32>(&path).unwrap(), None).unwrap();
    assert_eq!(b.iteration(), 3);
    for _ in 0..2 {
        let (ba, bb) = (a.next_batch(&data).unwrap(), b.next_batch(&data).unwrap());
        assert_eq!(a.train_step(&ba).unwrap().losses, b.train_step(&bb).unwrap().losses);
    }
}

fn expect_checkpoint_error(path: &Path) -> CheckpointError {
    match load_checkpoint::<f32>(path) {
        Err(Error::Checkpoint(e)) => e,
        other => panic!("expected a checkpoint error, got {:?}", other.map(|c| c.iteration)),
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = trainer(config(Variant::T1, 10));
    let good = dir.path().join("good.ckpt");
    save_checkpoint(&t.checkpoint(), &good).unwrap();
    let bytes = std::fs::read(&good).unwrap();
    let write = |name: &str, data: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, data).unwrap();
        p
    };

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(expect_checkpoint_error(&write("flip", &flipped)), CheckpointError::Corrupt(_)));

    let truncated = &bytes[..bytes.len() - 5];
    assert!(matches!(expect_checkpoint_error(&write("short", truncated)), CheckpointError::Corrupt(_)));

    let mut versioned = bytes.clone();
    versioned[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(
        expect_checkpoint_error(&write("version", &versioned)),
        CheckpointError::Version { found: 99, .. }
    ));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(expect_checkpoint_error(&write("magic", &magic)), CheckpointError::BadMagic));

    assert!(matches!(
        load_checkpoint::<f64>(&good),
        Err(Error::Checkpoint(CheckpointError::DType { .. }))
    ));
}

#[test]
fn resuming_truncates_the_log_to_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset();
    let opts = FitOptions {
        out_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let summary = fit(&mut trainer(config(Variant::T1T2, 6)), &data, &opts).unwrap();
    assert_eq!(summary.checkpoints.len(), 2);
    let full = read_log(&summary.log).unwrap();
    assert_eq!(full.iter().map(|r| r.losses.iter).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);

    std::fs::remove_file(&summary.checkpoints[1]).unwrap();
    let latest = latest_checkpoint(dir.path()).unwrap().unwrap();
    assert_eq!(latest, summary.checkpoints[0]);
    let mut resumed = Trainer::from_checkpoint(load_checkpoint::<f32>(&latest).unwrap(), None).unwrap();
    fit(&mut resumed, &data, &opts).unwrap();
    let again = read_log(&summary.log).unwrap();
    assert_eq!(again.len(), 6);
    for (a, b) in full.iter().zip(&again) {
        assert_eq!(a.losses, b.losses);
    }
}

#[test]
fn divergence_stops_with_a_diagnostic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        base_lr: 1e30,
        ..config(Variant::Srnet, 50)
    };
    let err = fit(
        &mut trainer(cfg),
        &dataset(),
        &FitOptions {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    let diagnostics: Vec<_> = std::fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("diagnostic-"))
        .collect();
    assert_eq!(diagnostics.len(), 1);
}

#[test]
fn invalid_configurations_are_rejected() {
    let g = GeneratorSpec {
        linear_scale: scale(),
        ..Default::default()
    };
    let bad_crop = TrainConfig {
        crop_size: Some(33),
        ..config(Variant::T1, 10)
    };
    assert!(matches!(
        Trainer::<f32>::new(bad_crop, g.clone(), CriticSpec::vgg_style(33, 4), CriticSpec::vgg_style(16, 4), None),
        Err(Error::Config(_))
    ));
    let mismatched_critic = TrainConfig {
        crop_size: Some(32),
        ..config(Variant::T1, 10)
    };
    assert!(Trainer::<f32>::new(
        mismatched_critic,
        g,
        CriticSpec::vgg_style(64, 4),
        CriticSpec::vgg_style(16, 4),
        None
    )
    .is_err());
}
