//! Degradation and interpolation: antialiased Catmull-Rom downsampling for
//! LR synthesis, and the nearest / bicubic upsamplers used as baselines.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Linear (per-side) super-resolution factor. The reported "area" factor is
/// its square, so 2/3/4/8 correspond to 4x/9x/16x/64x.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct LinearScale(u32);

impl LinearScale {
    pub const SUPPORTED: [u32; 4] = [2, 3, 4, 8];

    pub fn new(s: u32) -> Result<Self> {
        if Self::SUPPORTED.contains(&s) {
            Ok(Self(s))
        } else {
            Err(Error::Config(format!(
                "unsupported linear scale {s}; expected one of {:?}",
                Self::SUPPORTED
            )))
        }
    }

    /// Inverse of [`LinearScale::area`]: 16 -> 4.
    pub fn from_area(area: u32) -> Result<Self> {
        let s = (area as f64).sqrt().round() as u32;
        if s * s != area {
            return Err(Error::Config(format!("area scale {area} is not a perfect square")));
        }
        Self::new(s)
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    pub fn area(self) -> u32 {
        self.0 * self.0
    }

    /// Upsampling stages realizing this factor.
    pub fn stages(self) -> &'static [usize] {
        match self.0 {
            2 => &[2],
            3 => &[3],
            4 => &[2, 2],
            _ => &[2, 2, 2],
        }
    }

    pub fn lr_len(self, hr_len: usize) -> usize {
        hr_len.div_ceil(self.get())
    }
}

impl TryFrom<u32> for LinearScale {
    type Error = Error;

    fn try_from(s: u32) -> Result<Self> {
        Self::new(s)
    }
}

impl From<LinearScale> for u32 {
    fn from(s: LinearScale) -> u32 {
        s.0
    }
}

impl fmt::Display for LinearScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x", self.0)
    }
}

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Half-sample symmetric extension: `-1 -> 0`, `n -> n - 1`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Per-output-sample taps `(source index, weight)`, weights summing to 1.
type Taps = Vec<Vec<(usize, f64)>>;

fn downsample_taps(in_len: usize, s: usize) -> Taps {
    let out_len = in_len.div_ceil(s);
    let s = s as f64;
    let support = 2.0 * s;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * s - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|j| (reflect(j, in_len), cubic((j as f64 - center) / s)))
                .filter(|&(_, w)| w != 0.0)
                .collect();
            normalize(&mut taps);
            taps
        })
        .collect()
}

fn upsample_taps(in_len: usize, s: usize) -> Taps {
    let out_len = in_len * s;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / s as f64 - 0.5;
            let base = center.floor() as isize;
            let mut taps: Vec<(usize, f64)> = (base - 1..=base + 2)
                .map(|j| (reflect(j, in_len), cubic(j as f64 - center)))
                .filter(|&(_, w)| w != 0.0)
                .collect();
            normalize(&mut taps);
            taps
        })
        .collect()
}

fn normalize(taps: &mut [(usize, f64)]) {
    let sum: f64 = taps.iter().map(|t| t.1).sum();
    for t in taps {
        t.1 /= sum;
    }
}

/// Separable resampling: rows first, then columns, in f64.
fn separable(img: &Image, taps_x: &Taps, taps_y: &Taps) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let ow = taps_x.len();
    let oh = taps_y.len();
    let src = img.data();
    let mut horiz = vec![0.0f64; h * ow * c];
    for r in 0..h {
        for (x, taps) in taps_x.iter().enumerate() {
            for ch in 0..c {
                horiz[(r * ow + x) * c + ch] = taps
                    .iter()
                    .map(|&(j, wt)| wt * src[(r * w + j) * c + ch] as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0.0f32; oh * ow * c];
    for (y, taps) in taps_y.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                let v: f64 = taps.iter().map(|&(j, wt)| wt * horiz[(j * ow + x) * c + ch]).sum();
                out[(y * ow + x) * c + ch] = v as f32;
            }
        }
    }
    Image::new(ow, oh, c, out).expect("resampled dimensions are positive")
}

/// Antialiased bicubic downsampling of a single unclamped `f64` plane,
/// returning `(data, width, height)` with `ceil` output dimensions.
pub fn downsample_plane(plane: &[f64], width: usize, height: usize, s: usize) -> (Vec<f64>, usize, usize) {
    let (tx, ty) = (downsample_taps(width, s), downsample_taps(height, s));
    let (ow, oh) = (tx.len(), ty.len());
    let mut horiz = vec![0.0; height * ow];
    for r in 0..height {
        for (x, taps) in tx.iter().enumerate() {
            horiz[r * ow + x] = taps.iter().map(|&(j, w)| w * plane[r * width + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (y, taps) in ty.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().map(|&(j, w)| w * horiz[j * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Synthesizes an LR image by antialiased bicubic downsampling: the cubic
/// kernel is stretched by `s`, so each output pixel integrates over a
/// `4s`-wide footprint. Output is `ceil(H/s) x ceil(W/s)`, clamped to `[0, 1]`.
pub fn synthesize_lr(hr: &Image, s: LinearScale) -> Result<Image> {
    let s = s.get();
    if hr.width() < s || hr.height() < s {
        return Err(Error::Shape(format!(
            "{}x{} image smaller than scale {s}",
            hr.height(),
            hr.width()
        )));
    }
    Ok(separable(
        hr,
        &downsample_taps(hr.width(), s),
        &downsample_taps(hr.height(), s),
    ))
}

/// Bicubic (Catmull-Rom) upsampling by an integer factor.
pub fn upsample_bicubic(lr: &Image, s: usize) -> Image {
    separable(lr, &upsample_taps(lr.width(), s), &upsample_taps(lr.height(), s))
}

/// Pixel replication by an integer factor.
pub fn upsample_nearest(lr: &Image, s: usize) -> Image {
    let c = lr.channels();
    Image::from_fn(lr.width() * s, lr.height() * s, c, |r, col, ch| lr.get(r / s, col / s, ch))
        .expect("positive dimensions")
}
