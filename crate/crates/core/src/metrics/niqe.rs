//! Natural Image Quality Evaluator.
//!
//! Each 96x96 block of the luma image (scaled to 0..255) contributes 18
//! MSCN statistics at full resolution and 18 more at half resolution. The
//! image's blocks are summarized by a multivariate Gaussian whose distance
//! to a pristine-corpus Gaussian is the score.

use std::io::{Cursor, Read};
use std::path::Path;
use std::sync::OnceLock;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::downsample_plane;

pub const NIQE_MAGIC: &[u8; 8] = b"NIQEMVG\0";
pub const NIQE_VERSION: u32 = 1;
pub const NIQE_BLOCK: usize = 96;
pub const NIQE_FEATURES: usize = 36;
/// Pristine blocks must be at least this fraction as sharp as the sharpest
/// block of their image.
pub const SHARPNESS_THRESHOLD: f64 = 0.75;

static BUNDLED: &[u8] = include_bytes!("../../data/niqe_pristine.bin");

/// Multivariate Gaussian of pristine-image features.
#[derive(Clone, Debug, PartialEq)]
pub struct NiqeModel {
    pub block_size: usize,
    pub mean: Vec<f64>,
    /// Row-major `dim x dim` covariance.
    pub cov: Vec<f64>,
}

impl NiqeModel {
    /// The model shipped with the crate.
    pub fn bundled() -> &'static NiqeModel {
        static MODEL: OnceLock<NiqeModel> = OnceLock::new();
        MODEL.get_or_init(|| NiqeModel::from_bytes(BUNDLED).expect("bundled NIQE model is valid"))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = NIQE_MAGIC.to_vec();
        out.write_u32::<LE>(NIQE_VERSION).expect("vec write");
        out.write_u32::<LE>(self.dim() as u32).expect("vec write");
        out.write_u32::<LE>(self.block_size as u32).expect("vec write");
        for &v in self.mean.iter().chain(&self.cov) {
            out.write_f64::<LE>(v).expect("vec write");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Metric(format!("NIQE model: {m}"));
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != NIQE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = cur.read_u32::<LE>().map_err(|_| bad("truncated"))?;
        if version != NIQE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = cur.read_u32::<LE>().map_err(|_| bad("truncated"))? as usize;
        let block_size = cur.read_u32::<LE>().map_err(|_| bad("truncated"))? as usize;
        if dim != NIQE_FEATURES || block_size == 0 || !block_size.is_multiple_of(2) {
            return Err(bad(&format!("unexpected dimension {dim} / block {block_size}")));
        }
        let mut values = Vec::with_capacity(dim + dim * dim);
        for _ in 0..dim + dim * dim {
            values.push(cur.read_f64::<LE>().map_err(|_| bad("truncated"))?);
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let cov = values.split_off(dim);
        Ok(Self {
            block_size,
            mean: values,
            cov,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Fits the pristine Gaussian from the sharp blocks of a corpus.
    pub fn fit(images: &[Image]) -> Result<Self> {
        let mut rows = Vec::new();
        for img in images {
            let feats = block_features(img, NIQE_BLOCK)?;
            let max = feats.iter().map(|b| b.sharpness).fold(0.0, f64::max);
            rows.extend(
                feats
                    .into_iter()
                    .filter(|b| b.sharpness > SHARPNESS_THRESHOLD * max)
                    .map(|b| b.features),
            );
        }
        if rows.len() < 2 {
            return Err(Error::Metric("NIQE fit needs at least two sharp blocks".into()));
        }
        let (mean, cov) = mvg(&rows);
        Ok(Self {
            block_size: NIQE_BLOCK,
            mean,
            cov,
        })
    }
}

/// `0.2, 0.201, ..., 10.0` with the generalized-Gaussian moment ratios
/// `Γ(2/a)² / (Γ(1/a) Γ(3/a))` for each shape `a`.
fn shape_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=9800)
            .map(|i| {
                let a = 0.2 + i as f64 * 0.001;
                let r = libm::tgamma(2.0 / a).powi(2) / (libm::tgamma(1.0 / a) * libm::tgamma(3.0 / a));
                (a, r)
            })
            .collect()
    })
}

/// Shape and variance of a zero-mean generalized Gaussian fit.
fn ggd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sigma_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let e = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let rho = sigma_sq / (e * e);
    // the table stores the reciprocal ratio
    let alpha = shape_table()
        .iter()
        .min_by(|a, b| (rho - 1.0 / a.1).abs().total_cmp(&(rho - 1.0 / b.1).abs()))
        .map_or(f64::NAN, |t| t.0);
    let alpha = if rho.is_finite() { alpha } else { f64::NAN };
    (alpha, sigma_sq)
}

/// Shape, left and right standard deviation of an asymmetric generalized
/// Gaussian fit.
fn aggd_fit(x: &[f64]) -> (f64, f64, f64) {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    let left = (ls / ln as f64).sqrt();
    let right = (rs / rn as f64).sqrt();
    let gammahat = left / right;
    let n = x.len() as f64;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let rhat = mean_abs * mean_abs / mean_sq;
    let rhatnorm = rhat * (gammahat.powi(3) + 1.0) * (gammahat + 1.0) / (gammahat * gammahat + 1.0).powi(2);
    let alpha = if rhatnorm.is_finite() {
        shape_table()
            .iter()
            .min_by(|a, b| (a.1 - rhatnorm).powi(2).total_cmp(&(b.1 - rhatnorm).powi(2)))
            .map_or(f64::NAN, |t| t.0)
    } else {
        f64::NAN
    };
    (alpha, left, right)
}

/// The 18 statistics of one MSCN block (row-major, `h x w`).
fn block_stats(block: &[f64], w: usize, h: usize) -> [f64; 18] {
    let mut out = [0.0; 18];
    let (alpha, var) = ggd_fit(block);
    out[0] = alpha;
    out[1] = var;
    // horizontal, vertical, main diagonal, anti-diagonal neighbours
    let shifts: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (-1, 1)];
    let mut pair = vec![0.0; block.len()];
    for (k, &(dr, dc)) in shifts.iter().enumerate() {
        for r in 0..h {
            let sr = (r as isize - dr).rem_euclid(h as isize) as usize;
            for c in 0..w {
                let sc = (c as isize - dc).rem_euclid(w as isize) as usize;
                pair[r * w + c] = block[r * w + c] * block[sr * w + sc];
            }
        }
        let (alpha, left, right) = aggd_fit(&pair);
        let g = |x: f64| libm::tgamma(x);
        let mean = (right - left) * (g(2.0 / alpha) / g(1.0 / alpha)) * (g(1.0 / alpha).sqrt() / g(3.0 / alpha).sqrt());
        out[2 + 4 * k..6 + 4 * k].copy_from_slice(&[alpha, mean, left * left, right * right]);
    }
    out
}

/// Normalized 7x7 Gaussian with sigma 7/6.
fn mscn_window() -> [f64; 7] {
    let sigma = 7.0 / 6.0;
    let mut w = [0.0; 7];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - 3.0;
        *v = (-x * x / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable 7x7 Gaussian filtering with replicated borders.
fn blur(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = mscn_window();
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (0..7)
                .map(|i| {
                    let cc = (c as isize + i as isize - 3).clamp(0, w as isize - 1) as usize;
                    k[i] * plane[r * w + cc]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (0..7)
                .map(|i| {
                    let rr = (r as isize + i as isize - 3).clamp(0, h as isize - 1) as usize;
                    k[i] * tmp[rr * w + c]
                })
                .sum();
        }
    }
    out
}

/// Mean-subtracted contrast-normalized coefficients and the local
/// deviation map.
fn mscn(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = blur(plane, w, h);
    let sq: Vec<f64> = plane.iter().map(|v| v * v).collect();
    let mu_sq = blur(&sq, w, h);
    let sigma: Vec<f64> = mu_sq.iter().zip(&mu).map(|(a, m)| (a - m * m).abs().sqrt()).collect();
    let coeffs = plane
        .iter()
        .zip(&mu)
        .zip(&sigma)
        .map(|((x, m), s)| (x - m) / (s + 1.0))
        .collect();
    (coeffs, sigma)
}

pub(crate) struct BlockFeatures {
    pub features: Vec<f64>,
    pub sharpness: f64,
}

fn cut(plane: &[f64], w: usize, r0: usize, c0: usize, size: usize) -> Vec<f64> {
    (r0..r0 + size).flat_map(|r| plane[r * w + c0..r * w + c0 + size].iter().copied()).collect()
}

/// 36 features per non-overlapping block, in raster block order.
pub(crate) fn block_features(img: &Image, block: usize) -> Result<Vec<BlockFeatures>> {
    let (bw, bh) = (img.width() / block, img.height() / block);
    if bw == 0 || bh == 0 {
        return Err(Error::Metric(format!(
            "NIQE needs at least {block}x{block} pixels, image is {}x{}",
            img.height(),
            img.width()
        )));
    }
    let (w, h) = (bw * block, bh * block);
    let luma = img.luma();
    let plane: Vec<f64> = (0..h)
        .flat_map(|r| luma[r * img.width()..r * img.width() + w].iter().map(|v| v * 255.0))
        .collect();
    let (m1, sigma) = mscn(&plane, w, h);
    let (half, w2, h2) = downsample_plane(&plane, w, h, 2);
    let (m2, _) = mscn(&half, w2, h2);
    let half_block = block / 2;
    let mut out = Vec::with_capacity(bw * bh);
    for br in 0..bh {
        for bc in 0..bw {
            let mut features = block_stats(&cut(&m1, w, br * block, bc * block, block), block, block).to_vec();
            features.extend(block_stats(
                &cut(&m2, w2, br * half_block, bc * half_block, half_block),
                half_block,
                half_block,
            ));
            let s = cut(&sigma, w, br * block, bc * block, block);
            out.push(BlockFeatures {
                features,
                sharpness: s.iter().sum::<f64>() / s.len() as f64,
            });
        }
    }
    Ok(out)
}

/// Column means ignoring NaN, and the covariance of the NaN-free rows
/// (zero when fewer than two such rows exist).
fn mvg(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| {
            let vals: Vec<f64> = rows.iter().map(|r| r[j]).filter(|v| !v.is_nan()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let clean: Vec<&Vec<f64>> = rows.iter().filter(|r| r.iter().all(|v| !v.is_nan())).collect();
    let mut cov = vec![0.0; d * d];
    if clean.len() >= 2 {
        let n = clean.len() as f64;
        let cmean: Vec<f64> = (0..d).map(|j| clean.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        for i in 0..d {
            for j in i..d {
                let v = clean.iter().map(|r| (r[i] - cmean[i]) * (r[j] - cmean[j])).sum::<f64>() / (n - 1.0);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
    }
    (mean, cov)
}

fn pinv(m: DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = svd.singular_values.len() as f64 * smax * f64::EPSILON;
    svd.pseudo_inverse(tol).expect("both factors computed")
}

/// NIQE score of `img` against `model`; lower means more natural.
pub fn niqe_with(img: &Image, model: &NiqeModel) -> Result<f64> {
    let blocks = block_features(img, model.block_size)?;
    let rows: Vec<Vec<f64>> = blocks.into_iter().map(|b| b.features).collect();
    let (mean, cov) = mvg(&rows);
    let d = model.dim();
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Metric("NIQE features undefined (flat image?)".into()));
    }
    let delta = DVector::from_iterator(d, model.mean.iter().zip(&mean).map(|(p, m)| p - m));
    let pooled = (DMatrix::from_row_slice(d, d, &model.cov) + DMatrix::from_row_slice(d, d, &cov)) / 2.0;
    let q = (delta.transpose() * pinv(pooled) * &delta)[(0, 0)];
    Ok(q.max(0.0).sqrt())
}

/// NIQE against the bundled pristine model.
pub fn niqe(img: &Image) -> Result<f64> {
    niqe_with(img, NiqeModel::bundled())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ggd_shape_recovers_gaussian_and_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal: Vec<f64> = (0..200_000)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let (alpha, var) = ggd_fit(&normal);
        assert!((alpha - 2.0).abs() < 0.05, "{alpha}");
        assert!((var - 1.0).abs() < 0.02);
        let laplace: Vec<f64> = (0..200_000)
            .map(|_| {
                let u: f64 = rng.random_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect();
        let (alpha, _) = ggd_fit(&laplace);
        assert!((alpha - 1.0).abs() < 0.05, "{alpha}");
    }

    #[test]
    fn aggd_symmetric_input_has_equal_sides() {
        let x: Vec<f64> = (-500..=500).map(|i| i as f64 / 100.0).collect();
        let (_, l, r) = aggd_fit(&x);
        assert!((l - r).abs() < 1e-12);
    }

    #[test]
    fn model_bytes_round_trip() {
        let m = NiqeModel::bundled();
        assert_eq!(m.dim(), NIQE_FEATURES);
        assert_eq!(&NiqeModel::from_bytes(&m.to_bytes()).unwrap(), m);
        let mut bad = m.to_bytes();
        bad[8] = 9;
        assert!(NiqeModel::from_bytes(&bad).is_err());
    }

    #[test]
    fn small_image_rejected() {
        let img = Image::filled(95, 200, 3, 0.5).unwrap();
        assert!(matches!(niqe(&img), Err(Error::Metric(_))));
    }

    #[test]
    fn mvg_ignores_nan_rows() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, f64::NAN], vec![3.0, 4.0]];
        let (mean, cov) = mvg(&rows);
        assert_eq!(mean, [7.0 / 3.0, 3.0]);
        assert_eq!(cov, [2.0, 2.0, 2.0, 2.0]);
    }
}
