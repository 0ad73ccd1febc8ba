use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pathosr_core::data::synthetic::write_toy_corpus;
use pathosr_core::data::{load_manifest, Dataset, Split};
use pathosr_core::losses::{FeatureExtractor, VGG19_TO_CONV5_4};
use pathosr_core::metrics::{
    evaluate_model, merged_markdown, niqe_with, psnr, ssim, Method, MetricReport, NiqeModel, Scorers,
};
use pathosr_core::model::Generator;
use pathosr_core::resample::upsample_nearest;
use pathosr_core::trainer::{fit, latest_checkpoint, load_checkpoint, FitOptions, Trainer};
use pathosr_core::{Error, Image, LinearScale};

use crate::config::RunConfig;
use crate::{CACHE_ENV, EXIT_PARTIAL, EXIT_RUNTIME, EXIT_SUCCESS, EXIT_USAGE};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];
const TOY_TRAIN: usize = 8;
const TOY_TEST: usize = 2;
const TOY_SIZE: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration, detected before any work.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some items failed and were skipped.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => EXIT_SUCCESS,
            Outcome::Partial => EXIT_PARTIAL,
        }
    }
}

pub type CliResult = std::result::Result<Outcome, CliError>;

fn parse_scale(scale: Option<u32>) -> Result<Option<LinearScale>, CliError> {
    scale.map(LinearScale::new).transpose().map_err(usage)
}

/// Loads the config and applies command-line overrides.
pub fn load_config(
    path: &Path,
    seed: Option<u64>,
    scale: Option<u32>,
    out: Option<&Path>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path).map_err(usage)?;
    if let Some(s) = parse_scale(scale)? {
        cfg.set_scale(s);
    }
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = out {
        cfg.out_dir = out.to_path_buf();
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let index = load_manifest(&cfg.manifest)?
        .with_scale(cfg.train.linear_scale)
        .with_patch_size(cfg.train.roi.patch_size);
    Ok(Dataset::new(index))
}

fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".pathosr-cache"))
}

/// Writes the synthetic smear corpus and a matching toy config; returns the
/// config path.
pub fn prepare(out: Option<&Path>, seed: u64, scale: Option<u32>) -> Result<PathBuf, CliError> {
    let scale = parse_scale(scale)?.unwrap_or(LinearScale::new(2).expect("supported"));
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_cache_dir().join(format!("toy-seed{seed}")));
    let manifest = write_toy_corpus(&dir.join("data"), TOY_TRAIN, TOY_TEST, TOY_SIZE, seed)?;
    let rel = manifest.strip_prefix(&dir).unwrap_or(&manifest).to_path_buf();
    let cfg = RunConfig::toy(rel, PathBuf::from("run"), scale, seed);
    let path = dir.join("config.json");
    cfg.save(&path)?;
    Ok(path)
}

pub fn train(cfg: &RunConfig, resume: bool) -> CliResult {
    let dataset = open_dataset(cfg)?;
    let train = dataset.subset(Split::Train);
    let test = dataset.subset(Split::Test);
    let source = if test.is_empty() { &train } else { &test };
    let n = cfg.preview_count.min(source.len());
    let previews = source.samples(&(0..n).collect::<Vec<_>>())?;
    let phi = cfg
        .perceptual_weights
        .as_deref()
        .map(|p| FeatureExtractor::from_safetensors(p, &VGG19_TO_CONV5_4))
        .transpose()?;
    fs::create_dir_all(&cfg.out_dir).map_err(Error::from)?;
    let mut trainer = if resume {
        let path = latest_checkpoint(&cfg.out_dir)?.ok_or_else(|| {
            CliError::Usage(format!("--resume: no checkpoint under {}", cfg.out_dir.join("checkpoints").display()))
        })?;
        let ckpt = load_checkpoint::<f32>(&path)?;
        if ckpt.meta != cfg.meta() {
            log::warn!("configuration differs from {}; continuing with the checkpoint's", path.display());
        }
        log::info!("resuming from {} at iteration {}", path.display(), ckpt.iteration);
        Trainer::from_checkpoint(ckpt, phi)?
    } else {
        Trainer::new(
            cfg.train.clone(),
            cfg.generator.clone(),
            cfg.critic_t1.clone(),
            cfg.critic_t2.clone(),
            phi,
        )?
    };
    cfg.save(&cfg.out_dir.join("config.json"))?;
    log::info!(
        "{} generator with {} parameters, {} training records",
        cfg.train.variant.label(),
        trainer.generator().parameter_count(),
        train.len()
    );
    let summary = fit(
        &mut trainer,
        &train,
        &FitOptions {
            out_dir: cfg.out_dir.clone(),
            previews,
            stop_at: None,
        },
    )?;
    println!(
        "trained to iteration {}; log {}; last checkpoint {}",
        summary.iterations,
        summary.log.display(),
        summary.last_checkpoint().map_or("none".into(), |p| p.display().to_string())
    );
    Ok(Outcome::Success)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_niqe_model(path: Option<&Path>) -> Result<NiqeModel, CliError> {
    match path {
        Some(p) => NiqeModel::load(p).map_err(usage),
        None => Ok(NiqeModel::bundled().clone()),
    }
}

/// `(PSNR dB/SSIM/NIQE)` of `img` against `hr`.
fn caption(img: &Image, hr: &Image, niqe: &NiqeModel) -> Result<String, Error> {
    let third = niqe_with(img, niqe).map_or_else(|_| "n/a".to_string(), |v| format!("{v:.2}"));
    Ok(format!("({:.2} dB/{:.2}/{third})", psnr(img, hr)?, ssim(img, hr)?))
}

fn compare_panel(lr: &Image, sr: &Image, hr: &Image, scale: usize, niqe: &NiqeModel) -> Result<Image, Error> {
    let fit = |img: Image| -> Result<Image, Error> {
        if img.width() == hr.width() && img.height() == hr.height() {
            Ok(img)
        } else {
            img.crop(0, 0, hr.height(), hr.width())
        }
    };
    let hr = hr.to_rgb();
    let near = fit(upsample_nearest(lr, scale).to_rgb())?;
    let sr = fit(sr.to_rgb())?;
    let panels = [
        near.with_caption(&caption(&near, &hr, niqe)?),
        sr.with_caption(&caption(&sr, &hr, niqe)?),
        hr.with_caption(""),
    ];
    Image::side_by_side(&panels, 4)
}

pub struct InferArgs<'a> {
    pub checkpoint: &'a Path,
    pub input: &'a Path,
    pub out: &'a Path,
    pub scale: Option<u32>,
    /// Directory of HR references with the same basenames.
    pub compare: Option<&'a Path>,
    pub tile: usize,
    pub overlap: usize,
    pub niqe_model: Option<&'a Path>,
}

pub fn infer(args: &InferArgs<'_>) -> CliResult {
    let want = parse_scale(args.scale)?;
    let ckpt = load_checkpoint::<f32>(args.checkpoint)?;
    let mut generator = Generator::new(&ckpt.meta.generator, 0)?;
    generator.load_params(ckpt.generator.params)?;
    if let Some(s) = want {
        if s != generator.scale() {
            return Err(CliError::Usage(format!(
                "--scale {s} does not match the checkpoint's {}",
                generator.scale()
            )));
        }
    }
    let niqe = load_niqe_model(args.niqe_model)?;
    let files = image_files(args.input)?;
    fs::create_dir_all(args.out).map_err(Error::from)?;
    if args.compare.is_some() {
        fs::create_dir_all(args.out.join("compare")).map_err(Error::from)?;
    }
    let s = generator.scale().get();
    let mut failures = 0;
    for path in &files {
        let result = (|| -> Result<(), Error> {
            let img = Image::load(path)?;
            let lr = if generator.spec().in_channels == 3 { img.to_rgb() } else { img.to_gray() };
            let sr = generator.super_resolve(&lr, args.tile, args.overlap)?;
            let stem = path.file_stem().expect("listed files have names").to_string_lossy();
            sr.save(&args.out.join(format!("{stem}.png")))?;
            if let Some(hr_dir) = args.compare {
                let hr_path = hr_dir.join(path.file_name().expect("named"));
                if hr_path.is_file() {
                    let hr = Image::load(&hr_path)?;
                    let panel = compare_panel(&lr, &sr, &hr, s, &niqe)?;
                    panel.save(&args.out.join("compare").join(format!("{stem}.png")))?;
                } else {
                    log::warn!("{}: no HR reference at {}", path.display(), hr_path.display());
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            log::warn!("skipping {}: {e}", path.display());
            failures += 1;
        }
    }
    println!("{} of {} images super-resolved into {}", files.len() - failures, files.len(), args.out.display());
    Ok(if failures > 0 { Outcome::Partial } else { Outcome::Success })
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>, CliError> {
    let methods = list
        .split(',')
        .filter(|m| !m.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Method>, Error>>()
        .map_err(usage)?;
    if methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    Ok(methods)
}

fn reports_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("reports")
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// One table per `(dataset, area scale)`, methods in the given order.
fn render_tables(reports: &[MetricReport]) -> String {
    let mut groups: BTreeMap<(String, u32), Vec<MetricReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.dataset.clone(), r.area_scale)).or_default().push(r.clone());
    }
    groups.values().map(|g| merged_markdown(g)).collect::<Vec<_>>().join("\n")
}

pub fn evaluate(cfg: &RunConfig, methods: &[Method]) -> CliResult {
    let dataset = open_dataset(cfg)?;
    if dataset.subset(Split::Test).is_empty() {
        return Err(CliError::Runtime(Error::Config("no test records".into())));
    }
    let niqe = load_niqe_model(cfg.metrics.niqe_model.as_deref())?;
    let scorers = Scorers { niqe: &niqe, ma: None };
    let label = cfg.dataset_label();
    let dir = reports_dir(&cfg.out_dir);
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for method in methods {
        match evaluate_model(method, &dataset, &label, scorers) {
            Ok(r) => {
                let stem = format!("{}-x{}", slug(&r.method), r.area_scale);
                r.write_csv(&dir.join(format!("{stem}.csv")))?;
                fs::write(
                    dir.join(format!("{stem}.json")),
                    serde_json::to_string_pretty(&r).expect("report serializes") + "\n",
                )
                .map_err(Error::from)?;
                reports.push(r);
            }
            Err(e) => {
                log::error!("{method}: {e}");
                failed.push(method.to_string());
            }
        }
    }
    if reports.is_empty() {
        return Err(CliError::Runtime(Error::Metric(format!(
            "every method failed: {}",
            failed.join(", ")
        ))));
    }
    let table = render_tables(&reports);
    let area = cfg.train.linear_scale.area();
    fs::write(dir.join(format!("table-x{area}.md")), &table).map_err(Error::from)?;
    print!("{table}");
    Ok(if failed.is_empty() { Outcome::Success } else { Outcome::Partial })
}

/// Merges every saved report under `out_dir` into `reports/summary.md`.
pub fn report(out_dir: &Path) -> CliResult {
    let dir = reports_dir(out_dir);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no reports under {}; run evaluate first", dir.display())));
    }
    let mut reports = Vec::new();
    for p in &paths {
        let text = fs::read_to_string(p).map_err(Error::from)?;
        reports.push(serde_json::from_str::<MetricReport>(&text).map_err(Error::from)?);
    }
    let rank = |m: &str| match m {
        "Nearest" => 0,
        "Bicubic" => 1,
        "Identity" => 2,
        _ => 3,
    };
    reports.sort_by(|a, b| rank(&a.method).cmp(&rank(&b.method)).then_with(|| a.method.cmp(&b.method)));
    let table = render_tables(&reports);
    fs::write(dir.join("summary.md"), &table).map_err(Error::from)?;
    print!("{table}");
    Ok(Outcome::Success)
}

/// Fits a pristine NIQE model to every image in `input`.
pub fn niqe_fit(input: &Path, out: &Path) -> CliResult {
    let files = image_files(input)?;
    let images = files.iter().map(|p| Image::load(p)).collect::<Result<Vec<_>, _>>()?;
    if images.is_empty() {
        return Err(CliError::Usage(format!("no images in {}", input.display())));
    }
    let model = NiqeModel::fit(&images)?;
    model.save(out)?;
    println!("NIQE model fitted to {} images written to {}", images.len(), out.display());
    Ok(Outcome::Success)
}
