//! Procedural blood-smear-like images with WBC masks, for smoke tests and
//! demos when no real corpus is at hand.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RecordDescriptor, SamplePair, Split};
use crate::error::Result;
use crate::image::{Image, RoiMask};
use crate::resample::LinearScale;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmearConfig {
    pub width: usize,
    pub height: usize,
    pub rbc_count: usize,
    pub wbc_count: usize,
}

impl SmearConfig {
    pub fn square(size: usize) -> Self {
        let area = (size * size) as f64 / 4096.0;
        Self {
            width: size,
            height: size,
            rbc_count: (6.0 * area).round().max(2.0) as usize,
            wbc_count: 1,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Smooth lattice noise in `[-1, 1]`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let lattice = |ix: i64, iy: i64| {
        let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = lattice(ix, iy) * (1.0 - sx) + lattice(ix + 1, iy) * sx;
    let bottom = lattice(ix, iy + 1) * (1.0 - sx) + lattice(ix + 1, iy + 1) * sx;
    top * (1.0 - sy) + bottom * sy
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

struct Cell {
    r: f64,
    c: f64,
    radius: f64,
    lobes: Vec<(f64, f64, f64)>,
}

/// Renders one smear and its WBC mask.
pub fn smear(cfg: &SmearConfig, seed: u64) -> (Image, RoiMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);
    let unit = w.min(h) as f64 / 64.0;
    let rbc_radius = 6.5 * unit;
    let wbc_radius = 11.0 * unit;

    let rbcs: Vec<(f64, f64, f64)> = (0..cfg.rbc_count)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rbc_radius * rng.random_range(0.85..1.15),
            )
        })
        .collect();
    let wbcs: Vec<Cell> = (0..cfg.wbc_count)
        .map(|_| {
            let margin = wbc_radius.min(h as f64 / 2.0 - 1.0).min(w as f64 / 2.0 - 1.0);
            let r = rng.random_range(margin..h as f64 - margin);
            let c = rng.random_range(margin..w as f64 - margin);
            let radius = wbc_radius * rng.random_range(0.9..1.1);
            let n_lobes = rng.random_range(1..=3);
            let lobes = (0..n_lobes)
                .map(|_| {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let d = radius * rng.random_range(0.0..0.35);
                    (r + d * a.sin(), c + d * a.cos(), radius * rng.random_range(0.38..0.55))
                })
                .collect();
            Cell { r, c, radius, lobes }
        })
        .collect();

    let noise_seed = rng.random::<u64>();
    let background = [0.93, 0.87, 0.89];
    let rbc_color = [0.86, 0.50, 0.54];
    let cytoplasm = [0.80, 0.72, 0.88];
    let nucleus = [0.36, 0.20, 0.52];

    let mut data = Vec::with_capacity(w * h * 3);
    let mut bits = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let grain = value_noise(noise_seed, x / (6.0 * unit), y / (6.0 * unit));
            let mut color = background.map(|v| v + 0.015 * grain);
            for &(cr, cc, rad) in &rbcs {
                let d = ((y - cr).powi(2) + (x - cc).powi(2)).sqrt();
                let body = 1.0 - smoothstep(rad - 1.0, rad + 0.5, d);
                if body > 0.0 {
                    let pallor = 1.0 - smoothstep(0.2 * rad, 0.6 * rad, d);
                    let tone = mix(rbc_color, background, 0.55 * pallor);
                    color = mix(color, tone, body);
                }
            }
            let mut in_roi = false;
            for cell in &wbcs {
                let d = ((y - cell.r).powi(2) + (x - cell.c).powi(2)).sqrt();
                let body = 1.0 - smoothstep(cell.radius - 1.0, cell.radius + 0.5, d);
                in_roi |= d <= cell.radius;
                if body <= 0.0 {
                    continue;
                }
                let granules = value_noise(noise_seed ^ 0x5eed, x / (1.3 * unit), y / (1.3 * unit));
                let mut tone = cytoplasm.map(|v| v + 0.05 * granules);
                let lobe = cell
                    .lobes
                    .iter()
                    .map(|&(lr, lc, lrad)| {
                        let dl = ((y - lr).powi(2) + (x - lc).powi(2)).sqrt();
                        1.0 - smoothstep(lrad - 0.8, lrad + 0.8, dl)
                    })
                    .fold(0.0, f64::max);
                if lobe > 0.0 {
                    let chromatin = value_noise(noise_seed ^ 0xc0ffee, x / unit, y / unit)
                        + 0.5 * value_noise(noise_seed ^ 0xbeef, x / (0.6 * unit), y / (0.6 * unit));
                    let dark = nucleus.map(|v| v + 0.10 * chromatin);
                    tone = mix(tone, dark, lobe);
                }
                color = mix(color, tone, body);
            }
            data.extend(color.map(|v| v.clamp(0.0, 1.0) as f32));
            bits.push(u8::from(in_roi));
        }
    }
    (
        Image::new(w, h, 3, data).expect("positive size"),
        RoiMask::new(w, h, bits).expect("sized mask"),
    )
}

/// In-memory toy corpus: `n_train` training then `n_test` test pairs.
pub fn toy_pairs(
    n_train: usize,
    n_test: usize,
    size: usize,
    seed: u64,
    scale: LinearScale,
) -> Result<Vec<SamplePair>> {
    let cfg = SmearConfig::square(size);
    (0..n_train + n_test)
        .map(|i| {
            let (img, mask) = smear(&cfg, seed.wrapping_add(i as u64));
            let split = if i < n_train { Split::Train } else { Split::Test };
            SamplePair::synthesize(format!("smear-{i:04}"), img, Some(mask), split, scale)
        })
        .collect()
}

/// Writes PNG images, masks, and a `manifest.jsonl` into `dir`; returns the
/// manifest path.
pub fn write_toy_corpus(dir: &Path, n_train: usize, n_test: usize, size: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let cfg = SmearConfig::square(size);
    let mut lines = String::new();
    for i in 0..n_train + n_test {
        let (img, mask) = smear(&cfg, seed.wrapping_add(i as u64));
        let id = format!("smear-{i:04}");
        let hr = PathBuf::from(format!("{id}.png"));
        let mask_path = PathBuf::from(format!("{id}_mask.png"));
        img.save(&dir.join(&hr))?;
        mask.save(&dir.join(&mask_path))?;
        let rec = RecordDescriptor {
            id,
            hr,
            mask: Some(mask_path),
            split: if i < n_train { Split::Train } else { Split::Test },
        };
        lines += &serde_json::to_string(&rec)?;
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, lines)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_marks_a_cell() {
        let cfg = SmearConfig::square(64);
        let (a, ma) = smear(&cfg, 5);
        let (b, mb) = smear(&cfg, 5);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert!(ma.count() > 200, "{}", ma.count());
        let (c, _) = smear(&cfg, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_toy_corpus(dir.path(), 3, 2, 32, 1).unwrap();
        let index = crate::data::load_manifest(&manifest).unwrap();
        assert_eq!(index.count(Split::Train), 3);
        assert_eq!(index.count(Split::Test), 2);
    }
}
