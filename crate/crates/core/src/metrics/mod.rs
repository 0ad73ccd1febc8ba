//! Full-reference (PSNR, SSIM) and no-reference (NIQE, Perceptual Index)
//! image quality.

mod niqe;
mod report;

pub use niqe::{niqe, niqe_with, NiqeModel, NIQE_BLOCK, NIQE_FEATURES, NIQE_MAGIC, NIQE_VERSION, SHARPNESS_THRESHOLD};
pub use report::{evaluate_model, merged_markdown, ImageScores, Method, MetricReport, Scorers, Summary};

use crate::error::{Error, Result};
use crate::image::Image;

/// Reported PSNR for identical images, and the ceiling for all others.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )))
    }
}

/// `10 log10(peak^2 / MSE)` over every pixel and channel with peak 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-d Gaussian; the 2-d window is its outer product.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Gaussian-weighted means over every fully contained window.
fn filter_valid(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = ssim_kernel();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM of the BT.601 luma planes, 11x11 Gaussian window (sigma 1.5),
/// valid windows only.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, image is {h}x{w}"
        )));
    }
    let (x, y) = (a.luma(), b.luma());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h));
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Learned no-reference quality score on a 0..10 scale (higher is better),
/// supplied by an external implementation.
pub trait MaScorer: Sync {
    fn score(&self, img: &Image) -> Result<f64>;
}

/// `((10 - ma) + niqe) / 2`.
pub fn perceptual_index_from(ma: f64, niqe: f64) -> f64 {
    0.5 * ((10.0 - ma) + niqe)
}

/// Perceptual Index, or `None` without a Ma scorer or when either half
/// fails (logged as a warning).
pub fn perceptual_index(img: &Image, niqe_score: Option<f64>, scorer: Option<&dyn MaScorer>) -> Option<f64> {
    let scorer = scorer?;
    let niqe_score = niqe_score?;
    match scorer.score(img) {
        Ok(ma) => Some(perceptual_index_from(ma, niqe_score)),
        Err(e) => {
            log::warn!("Ma scorer failed: {e}");
            None
        }
    }
}
