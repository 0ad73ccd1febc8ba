use std::path::{Path, PathBuf};
use std::time::Instant;

use pathosr_tensor::Float;

use super::checkpoint::save_checkpoint;
use super::log::{LogRow, LogWriter};
use super::Trainer;
use crate::data::{Dataset, SamplePair};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::upsample_nearest;

/// LR tile side used when rendering preview panels.
const PREVIEW_TILE: usize = 128;

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub out_dir: PathBuf,
    /// Records rendered as LR | SR | HR panels at every checkpoint.
    pub previews: Vec<SamplePair>,
    /// Stop once this many iterations are complete, as if interrupted.
    pub stop_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub iterations: u64,
    pub log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub previews: Vec<PathBuf>,
}

impl FitSummary {
    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.last().map(PathBuf::as_path)
    }
}

pub fn log_path(out_dir: &Path) -> PathBuf {
    out_dir.join("train_log.csv")
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("iter-{iteration:08}.ckpt"))
}

/// Highest-iteration `iter-*.ckpt` under `out_dir/checkpoints`.
pub fn latest_checkpoint(out_dir: &Path) -> Result<Option<PathBuf>> {
    let dir = out_dir.join("checkpoints");
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let iter = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("iter-"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(iter) = iter {
            if best.as_ref().is_none_or(|(b, _)| iter > *b) {
                best = Some((iter, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

fn write_previews<F: Float>(trainer: &Trainer<F>, opts: &FitOptions, iteration: u64) -> Result<Vec<PathBuf>> {
    let dir = opts.out_dir.join("samples");
    std::fs::create_dir_all(&dir)?;
    let s = trainer.config().linear_scale.get();
    let mut written = Vec::new();
    for pair in &opts.previews {
        let sr = trainer.generator().super_resolve(&pair.lr, PREVIEW_TILE, 16)?;
        let panel = Image::side_by_side(&[upsample_nearest(&pair.lr, s), sr, pair.hr.clone()], 4)?;
        let path = dir.join(format!("iter-{iteration:08}-{}.png", pair.id));
        panel.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Runs training steps until `total_iters`, continuing from the trainer's
/// current iteration. A non-finite loss stops the run after writing
/// `diagnostic-iter-*.ckpt` next to the regular checkpoints.
pub fn fit<F: Float>(trainer: &mut Trainer<F>, dataset: &Dataset, opts: &FitOptions) -> Result<FitSummary> {
    if dataset.is_empty() {
        return Err(Error::Config("no training records".into()));
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    let log = log_path(&opts.out_dir);
    let mut writer = if trainer.iteration() == 0 {
        LogWriter::create(&log)?
    } else {
        LogWriter::resume(&log, trainer.iteration())?
    };
    let total = trainer.config().total_iters;
    let stop = opts.stop_at.unwrap_or(total).min(total);
    let interval = trainer.config().checkpoint_interval;
    let mut summary = FitSummary {
        iterations: trainer.iteration(),
        log,
        checkpoints: Vec::new(),
        previews: Vec::new(),
    };
    while trainer.iteration() < stop {
        let start = Instant::now();
        let batch = trainer.next_batch(dataset)?;
        let report = match trainer.train_step(&batch) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                writer.flush()?;
                let path = opts
                    .out_dir
                    .join("checkpoints")
                    .join(format!("diagnostic-iter-{:08}.ckpt", trainer.iteration()));
                save_checkpoint(&trainer.checkpoint(), &path)?;
                log::error!("{e}; diagnostic checkpoint at {}", path.display());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(audit) = &report.audit {
            let violations = audit.violations();
            if !violations.is_empty() {
                return Err(Error::Config(format!(
                    "stage isolation violated at iteration {}: {violations:?}",
                    audit.iteration
                )));
            }
        }
        writer.append(&LogRow {
            losses: report.losses,
            wall_ms: start.elapsed().as_millis() as u64,
        })?;
        let it = trainer.iteration();
        if it.is_multiple_of(interval) || it == total {
            writer.flush()?;
            let path = checkpoint_path(&opts.out_dir, it);
            save_checkpoint(&trainer.checkpoint(), &path)?;
            summary.checkpoints.push(path);
            summary.previews.extend(write_previews(trainer, opts, it)?);
            log::info!(
                "iter {it}/{total} j_recon {:.5} j_t1 {:.4} j_t2 {:.4} j_adv {:.5}",
                report.losses.j_recon,
                report.losses.j_t1,
                report.losses.j_t2,
                report.losses.j_adv
            );
        }
    }
    writer.flush()?;
    summary.iterations = trainer.iteration();
    Ok(summary)
}
