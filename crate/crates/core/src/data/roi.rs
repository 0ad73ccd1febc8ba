//! Region proposals from ground-truth ROI masks: one candidate window per
//! 8-connected mask component, centered on the component's bounding box.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, RoiMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiConfig {
    /// Side of the square HR window.
    pub patch_size: usize,
    /// Minimum fraction of mask pixels inside a window.
    pub coverage_threshold: f64,
    pub max_patches: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            coverage_threshold: 0.1,
            max_patches: 4,
        }
    }
}

impl RoiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Config("ROI patch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.coverage_threshold) {
            return Err(Error::Config(format!(
                "ROI coverage threshold {} outside [0, 1]",
                self.coverage_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiWindow {
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub coverage: f64,
}

/// Co-located HR and SR patches.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiPatchPair {
    pub x_hr: Image,
    pub x_sr: Image,
    /// Top-left `(row, col)` in HR coordinates.
    pub origin: (usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct BoundingBox {
    rmin: usize,
    rmax: usize,
    cmin: usize,
    cmax: usize,
}

fn components(mask: &RoiMask) -> Vec<BoundingBox> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || mask.bits()[start] == 0 {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut bb = BoundingBox {
            rmin: start / w,
            rmax: start / w,
            cmin: start % w,
            cmax: start % w,
        };
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            bb.rmin = bb.rmin.min(r);
            bb.rmax = bb.rmax.max(r);
            bb.cmin = bb.cmin.min(c);
            bb.cmax = bb.cmax.max(c);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if !seen[j] && mask.bits()[j] != 0 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        boxes.push(bb);
    }
    boxes
}

/// Summed-area table with a zero first row/column.
struct Integral {
    width: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn new(mask: &RoiMask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for r in 0..h {
            for c in 0..w {
                sums[(r + 1) * (w + 1) + c + 1] = mask.bits()[r * w + c] as u64
                    + sums[r * (w + 1) + c + 1]
                    + sums[(r + 1) * (w + 1) + c]
                    - sums[r * (w + 1) + c];
            }
        }
        Self { width: w + 1, sums }
    }

    fn window(&self, row: usize, col: usize, size: usize) -> u64 {
        let at = |r: usize, c: usize| self.sums[r * self.width + c];
        at(row + size, col + size) + at(row, col) - at(row, col + size) - at(row + size, col)
    }
}

fn centered_start(lo: usize, hi: usize, size: usize, len: usize) -> usize {
    let start = (lo as i64 + hi as i64 + 1 - size as i64).div_euclid(2);
    start.clamp(0, (len - size) as i64) as usize
}

/// Up to `max_patches` windows with coverage at least `coverage_threshold`,
/// best-covered first. Empty when the mask has no ROI pixels or the patch
/// does not fit the image.
pub fn propose_roi_windows(mask: &RoiMask, cfg: &RoiConfig) -> Vec<RoiWindow> {
    let p = cfg.patch_size;
    if p == 0 || p > mask.width() || p > mask.height() || cfg.max_patches == 0 {
        return Vec::new();
    }
    let integral = Integral::new(mask);
    let area = (p * p) as f64;
    let mut windows: Vec<RoiWindow> = Vec::new();
    for bb in components(mask) {
        let row = centered_start(bb.rmin, bb.rmax, p, mask.height());
        let col = centered_start(bb.cmin, bb.cmax, p, mask.width());
        if windows.iter().any(|w| w.row == row && w.col == col) {
            continue;
        }
        let coverage = integral.window(row, col, p) as f64 / area;
        if coverage >= cfg.coverage_threshold {
            windows.push(RoiWindow {
                row,
                col,
                size: p,
                coverage,
            });
        }
    }
    // stable: ties keep raster order of the components
    windows.sort_by(|a, b| b.coverage.total_cmp(&a.coverage));
    windows.truncate(cfg.max_patches);
    windows
}

/// Cuts matching HR/SR patches at every proposed window.
pub fn propose_roi_patches(
    hr: &Image,
    sr: &Image,
    mask: &RoiMask,
    cfg: &RoiConfig,
) -> Result<Vec<RoiPatchPair>> {
    if !hr.same_shape(sr) || (mask.width(), mask.height()) != (hr.width(), hr.height()) {
        return Err(Error::Shape("hr, sr and mask must share dimensions".into()));
    }
    propose_roi_windows(mask, cfg)
        .into_iter()
        .map(|w| {
            Ok(RoiPatchPair {
                x_hr: hr.crop(w.row, w.col, w.size, w.size)?,
                x_sr: sr.crop(w.row, w.col, w.size, w.size)?,
                origin: (w.row, w.col),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(mask: &mut RoiMask, r0: usize, c0: usize, side: usize) {
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                mask.set(r, c, true);
            }
        }
    }

    #[test]
    fn empty_mask_yields_nothing() {
        let mask = RoiMask::empty(32, 32);
        assert!(propose_roi_windows(&mask, &RoiConfig::default()).is_empty());
    }

    #[test]
    fn window_is_centered_on_blob() {
        let mut mask = RoiMask::empty(200, 200);
        blob(&mut mask, 80, 80, 40);
        let w = propose_roi_windows(&mask, &RoiConfig::default());
        assert_eq!(w.len(), 1);
        // 40x40 blob spans 80..=119, centre 99.5; a 64 window starting at 68
        // spans 68..=131 with the same centre
        assert_eq!((w[0].row, w[0].col), (68, 68));
        assert!((w[0].coverage - 1600.0 / 4096.0).abs() < 1e-12);
    }

    #[test]
    fn windows_clamp_at_borders() {
        let mut mask = RoiMask::empty(100, 80);
        blob(&mut mask, 0, 95, 5);
        let w = propose_roi_windows(
            &mask,
            &RoiConfig {
                coverage_threshold: 0.0,
                ..Default::default()
            },
        );
        assert_eq!((w[0].row, w[0].col), (0, 36));
    }

    #[test]
    fn low_coverage_component_dropped() {
        let mut mask = RoiMask::empty(128, 128);
        blob(&mut mask, 10, 10, 3);
        assert!(propose_roi_windows(&mask, &RoiConfig::default()).is_empty());
    }

    #[test]
    fn diagonal_pixels_join_one_component() {
        let mut mask = RoiMask::empty(8, 8);
        mask.set(1, 1, true);
        mask.set(2, 2, true);
        mask.set(3, 3, true);
        assert_eq!(components(&mask).len(), 1);
    }

    #[test]
    fn patches_cut_from_same_coordinates() {
        let hr = Image::from_fn(20, 20, 3, |r, c, ch| ((r * 20 + c) * 3 + ch) as f32 / 1200.0).unwrap();
        let sr = Image::from_fn(20, 20, 3, |r, c, _| (r + c) as f32 / 40.0).unwrap();
        let mut mask = RoiMask::empty(20, 20);
        blob(&mut mask, 12, 3, 4);
        let cfg = RoiConfig {
            patch_size: 8,
            ..Default::default()
        };
        let pairs = propose_roi_patches(&hr, &sr, &mask, &cfg).unwrap();
        let (r, c) = pairs[0].origin;
        assert_eq!(pairs[0].x_hr, hr.crop(r, c, 8, 8).unwrap());
        assert_eq!(pairs[0].x_sr, sr.crop(r, c, 8, 8).unwrap());
    }
}
