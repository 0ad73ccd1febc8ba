use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{niqe_with, perceptual_index, psnr, ssim, MaScorer, NiqeModel};
use crate::data::{Dataset, SamplePair, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Generator;
use crate::resample::{upsample_bicubic, upsample_nearest};
use crate::trainer::load_checkpoint;

/// LR tile side for checkpoint inference during evaluation.
const EVAL_TILE: usize = 128;
const EVAL_OVERLAP: usize = 8;

/// How the SR estimate of each test image is produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Method {
    Nearest,
    Bicubic,
    /// Scores HR against itself.
    Identity,
    Checkpoint(PathBuf),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Nearest => "Nearest".into(),
            Method::Bicubic => "Bicubic".into(),
            Method::Identity => "Identity".into(),
            Method::Checkpoint(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `nearest`, `bicubic`, `identity` or `ckpt:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "nearest" => Ok(Method::Nearest),
            "bicubic" => Ok(Method::Bicubic),
            "identity" => Ok(Method::Identity),
            other => match other.strip_prefix("ckpt:") {
                Some(p) if !p.is_empty() => Ok(Method::Checkpoint(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "unknown method `{other}`; expected nearest, bicubic, identity or ckpt:<path>"
                ))),
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Nearest => f.write_str("nearest"),
            Method::Bicubic => f.write_str("bicubic"),
            Method::Identity => f.write_str("identity"),
            Method::Checkpoint(p) => write!(f, "ckpt:{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// `None` when the image is too small for NIQE.
    pub niqe: Option<f64>,
    pub pi: Option<f64>,
}

/// Column means. Optional columns average the images that have a value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub niqe: Option<f64>,
    pub pi: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Summary {
    pub fn of(rows: &[ImageScores]) -> Summary {
        let n = rows.len().max(1) as f64;
        Summary {
            psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            niqe: mean_of(rows.iter().map(|r| r.niqe)),
            pi: mean_of(rows.iter().map(|r| r.pi)),
        }
    }
}

/// Scores of one method on one dataset at one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    /// Area factor, the square of the linear scale.
    pub area_scale: u32,
    pub per_image: Vec<ImageScores>,
    pub aggregate: Summary,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricReport {
    pub fn new(method: String, dataset: String, area_scale: u32, per_image: Vec<ImageScores>) -> Self {
        let aggregate = Summary::of(&per_image);
        Self {
            method,
            dataset,
            area_scale,
            per_image,
            aggregate,
        }
    }

    /// One row per image followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,area_scale,id,psnr_db,ssim,niqe,pi\n");
        let prefix = format!("{},{},{}", self.method, self.dataset, self.area_scale);
        for r in &self.per_image {
            let _ = writeln!(
                out,
                "{prefix},{},{:.6},{:.6},{},{}",
                r.id,
                r.psnr_db,
                r.ssim,
                opt(r.niqe),
                opt(r.pi)
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "{prefix},mean,{:.6},{:.6},{},{}",
            a.psnr_db,
            a.ssim,
            opt(a.niqe),
            opt(a.pi)
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Methods as columns; PSNR, SSIM, NIQE and PI as rows. Missing values
/// print as `n/a`.
pub fn merged_markdown(reports: &[MetricReport]) -> String {
    let cell = |v: Option<f64>, digits: usize| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"));
    let mut out = String::new();
    let title = reports
        .first()
        .map(|r| format!("{} ({}x)", r.dataset, r.area_scale))
        .unwrap_or_else(|| "Metric".into());
    let _ = write!(out, "| {title} |");
    for r in reports {
        let _ = write!(out, " {} |", r.method);
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(reports.len()));
    out.push('\n');
    let rows: [(&str, fn(&Summary) -> Option<f64>, usize); 4] = [
        ("PSNR", |s| Some(s.psnr_db), 2),
        ("SSIM", |s| Some(s.ssim), 2),
        ("NIQE", |s| s.niqe, 2),
        ("PI", |s| s.pi, 2),
    ];
    for (name, get, digits) in rows {
        let _ = write!(out, "| {name} |");
        for r in reports {
            let _ = write!(out, " {} |", cell(get(&r.aggregate), digits));
        }
        out.push('\n');
    }
    out
}

fn crop_to(img: Image, like: &Image) -> Result<Image> {
    if img.width() == like.width() && img.height() == like.height() {
        Ok(img)
    } else {
        img.crop(0, 0, like.height(), like.width())
    }
}

/// No-reference scorers applied to every reconstruction.
#[derive(Clone, Copy)]
pub struct Scorers<'a> {
    pub niqe: &'a NiqeModel,
    pub ma: Option<&'a dyn MaScorer>,
}

impl Default for Scorers<'static> {
    fn default() -> Self {
        Self {
            niqe: NiqeModel::bundled(),
            ma: None,
        }
    }
}

fn score(pair: &SamplePair, sr: &Image, scorers: Scorers<'_>) -> Result<ImageScores> {
    let niqe_score = match niqe_with(sr, scorers.niqe) {
        Ok(v) => Some(v),
        Err(e) => {
            log::debug!("{}: NIQE unavailable: {e}", pair.id);
            None
        }
    };
    Ok(ImageScores {
        id: pair.id.clone(),
        psnr_db: psnr(sr, &pair.hr)?,
        ssim: ssim(sr, &pair.hr)?,
        niqe: niqe_score,
        pi: perceptual_index(sr, niqe_score, scorers.ma),
    })
}

/// Degrades every test image at the dataset's scale, reconstructs it with
/// `method`, and scores it against the HR original.
pub fn evaluate_model(
    method: &Method,
    dataset: &Dataset,
    dataset_label: &str,
    scorers: Scorers<'_>,
) -> Result<MetricReport> {
    let test = dataset.subset(Split::Test);
    if test.is_empty() {
        return Err(Error::Config("no test records".into()));
    }
    let scale = dataset.scale();
    let s = scale.get();
    let generator = match method {
        Method::Checkpoint(path) => {
            let ckpt = load_checkpoint::<f32>(path)?;
            let mut g = Generator::new(&ckpt.meta.generator, 0)?;
            if g.scale() != scale {
                return Err(Error::Config(format!(
                    "checkpoint {} is {} but the dataset is {}",
                    path.display(),
                    g.scale(),
                    scale
                )));
            }
            g.load_params(ckpt.generator.params)?;
            Some(g)
        }
        _ => None,
    };
    let rows = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let pair = test.sample(i)?;
            let sr = match method {
                Method::Nearest => upsample_nearest(&pair.lr, s),
                Method::Bicubic => upsample_bicubic(&pair.lr, s),
                Method::Identity => pair.hr.clone(),
                Method::Checkpoint(_) => generator
                    .as_ref()
                    .expect("generator loaded for checkpoint method")
                    .super_resolve(&pair.lr, EVAL_TILE, EVAL_OVERLAP)?,
            };
            let sr = crop_to(sr, &pair.hr)?;
            score(&pair, &sr, scorers)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(method.label(), dataset_label.to_string(), scale.area(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::toy_pairs;
    use crate::metrics::PSNR_CAP_DB;
    use crate::resample::LinearScale;

    fn toy() -> Dataset {
        let scale = LinearScale::new(2).unwrap();
        Dataset::from_pairs(toy_pairs(1, 2, 48, 3, scale).unwrap(), scale, 32).unwrap()
    }

    #[test]
    fn methods_parse() {
        assert_eq!("nearest".parse::<Method>().unwrap(), Method::Nearest);
        assert_eq!(
            "ckpt:a/b.ckpt".parse::<Method>().unwrap(),
            Method::Checkpoint("a/b.ckpt".into())
        );
        assert!("ckpt:".parse::<Method>().is_err());
        assert!("lanczos".parse::<Method>().is_err());
    }

    #[test]
    fn identity_is_perfect() {
        let r = evaluate_model(&Method::Identity, &toy(), "toy", Scorers::default()).unwrap();
        assert_eq!(r.per_image.len(), 2);
        assert_eq!(r.area_scale, 4);
        assert_eq!(r.aggregate.psnr_db, PSNR_CAP_DB);
        assert!((r.aggregate.ssim - 1.0).abs() < 1e-9);
        assert!(r.aggregate.pi.is_none());
    }

    #[test]
    fn baselines_are_deterministic_and_ordered() {
        let d = toy();
        let a = evaluate_model(&Method::Bicubic, &d, "toy", Scorers::default()).unwrap();
        let b = evaluate_model(&Method::Bicubic, &d, "toy", Scorers::default()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let n = evaluate_model(&Method::Nearest, &d, "toy", Scorers::default()).unwrap();
        assert!(a.aggregate.psnr_db > n.aggregate.psnr_db);
        let md = merged_markdown(&[n, a]);
        assert!(md.starts_with("| toy (4x) | Nearest | Bicubic |"));
        assert!(md.contains("| PI | n/a | n/a |"));
    }

    #[test]
    fn empty_test_split_rejected() {
        let scale = LinearScale::new(2).unwrap();
        let d = Dataset::from_pairs(toy_pairs(2, 0, 32, 3, scale).unwrap(), scale, 16).unwrap();
        let err = evaluate_model(&Method::Nearest, &d, "toy", Scorers::default()).unwrap_err();
        assert!(err.to_string().contains("no test records"));
    }

    #[test]
    fn aggregate_is_column_mean() {
        let rows = vec![
            ImageScores {
                id: "a".into(),
                psnr_db: 30.0,
                ssim: 0.5,
                niqe: Some(4.0),
                pi: None,
            },
            ImageScores {
                id: "b".into(),
                psnr_db: 20.0,
                ssim: 0.7,
                niqe: None,
                pi: None,
            },
        ];
        let r = MetricReport::new("m".into(), "d".into(), 16, rows);
        assert_eq!(r.aggregate.psnr_db, 25.0);
        assert!((r.aggregate.ssim - 0.6).abs() < 1e-12);
        assert_eq!(r.aggregate.niqe, Some(4.0));
        assert!(r.to_csv().ends_with("m,d,16,mean,25.000000,0.600000,4.000000,\n"));
    }
}
