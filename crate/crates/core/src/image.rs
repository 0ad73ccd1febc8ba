//! Floating-point rasters, binary ROI masks, and file IO.

use std::path::Path;

use image::{DynamicImage, GenericImageView};
use pathosr_tensor::{Float, Tensor};

use crate::error::{Error, Result};

/// Interleaved `height x width x channels` raster with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        let mut img = Self {
            width,
            height,
            channels,
            data,
        };
        img.clamp();
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// `f(row, col, channel)` evaluated at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = value.clamp(0.0, 1.0);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    fn clamp(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    /// Single-channel BT.601 luma (identity for gray images), in f64.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.iter().map(|&v| v as f64).collect();
        }
        self.data
            .chunks(3)
            .map(|p| {
                LUMA_WEIGHTS[0] * p[0] as f64 + LUMA_WEIGHTS[1] * p[1] as f64 + LUMA_WEIGHTS[2] * p[2] as f64
            })
            .collect()
    }

    pub fn to_gray(&self) -> Image {
        let data = self.luma().into_iter().map(|v| v as f32).collect();
        Image::new(self.width, self.height, 1, data).expect("same dimensions")
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image::new(self.width, self.height, 3, data).expect("same dimensions")
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({row},{col}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for r in row..row + height {
            let start = (r * self.width + col) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Image::new(width, height, self.channels, data)
    }

    pub fn load(path: &Path) -> Result<Image> {
        let dynamic = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&dynamic))
    }

    /// 8-bit sources map to `v / 255`, 16-bit to `v / 65535`. Alpha is dropped.
    pub fn from_dynamic(dynamic: &DynamicImage) -> Image {
        let (w, h) = dynamic.dimensions();
        let (w, h) = (w as usize, h as usize);
        if dynamic.color().has_color() {
            let buf = dynamic.to_rgb32f();
            Image::new(w, h, 3, buf.into_raw()).expect("decoder dimensions")
        } else {
            let buf = dynamic.to_luma32f();
            Image::new(w, h, 1, buf.into_raw()).expect("decoder dimensions")
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let bytes: Vec<u8> = self.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 3 {
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("sized buffer"))
        } else {
            DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("sized buffer"))
        }
    }

    /// Writes an 8-bit image; the format follows the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_dynamic().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Horizontal concatenation with a white gutter; gray inputs are promoted
    /// to RGB when mixed with color ones. Shorter images are top-aligned.
    pub fn side_by_side(images: &[Image], gutter: usize) -> Result<Image> {
        if images.is_empty() {
            return Err(Error::Shape("side_by_side: no images".into()));
        }
        let channels = images.iter().map(|i| i.channels).max().unwrap_or(1);
        let height = images.iter().map(|i| i.height).max().unwrap_or(1);
        let width = images.iter().map(|i| i.width).sum::<usize>() + gutter * (images.len() - 1);
        let mut out = Image::filled(width, height, channels, 1.0)?;
        let mut x0 = 0;
        for img in images {
            let img = if channels == 3 { img.to_rgb() } else { img.clone() };
            for r in 0..img.height {
                for c in 0..img.width {
                    for ch in 0..channels {
                        out.set(r, x0 + c, ch, img.get(r, c, ch));
                    }
                }
            }
            x0 += img.width + gutter;
        }
        Ok(out)
    }

    /// Stacks images (all the same shape) into an NCHW tensor.
    pub fn batch_to_tensor<F: Float>(images: &[&Image]) -> Result<Tensor<F>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if !img.same_shape(first) {
                return Err(Error::Shape(format!(
                    "batch mixes {}x{}x{} and {}x{}x{}",
                    h, w, c, img.height, img.width, img.channels
                )));
            }
            for ch in 0..c {
                data.extend(img.data.iter().skip(ch).step_by(c).map(|&v| F::of(v as f64)));
            }
        }
        Ok(Tensor::new(&[images.len(), c, h, w], data)?)
    }

    /// Unpacks sample `index` of an NCHW tensor, clamping into `[0, 1]`.
    pub fn from_tensor<F: Float>(t: &Tensor<F>, index: usize) -> Result<Image> {
        let (n, c, h, w) = t.dims4()?;
        if index >= n {
            return Err(Error::Shape(format!("sample {index} of batch {n}")));
        }
        let plane = h * w;
        let src = &t.data()[index * c * plane..(index + 1) * c * plane];
        let mut data = vec![0.0f32; c * plane];
        for ch in 0..c {
            for p in 0..plane {
                data[p * c + ch] = src[ch * plane + p].as_f64() as f32;
            }
        }
        Image::new(w, h, c, data)
    }

    /// Burns a caption in a 3x5 bitmap font into a white band under the image.
    pub fn with_caption(&self, text: &str) -> Image {
        let scale = (self.width / 120).clamp(1, 4);
        let band = 7 * scale + 2;
        let mut out = Image::filled(self.width, self.height + band, 3, 1.0).expect("nonempty");
        let rgb = self.to_rgb();
        out.data[..rgb.data.len()].copy_from_slice(&rgb.data);
        let mut x = 1;
        for ch in text.chars() {
            let Some(rows) = glyph(ch) else {
                x += 4 * scale;
                continue;
            };
            for (gy, bits) in rows.iter().enumerate() {
                for gx in 0..3 {
                    if bits & (0b100 >> gx) == 0 {
                        continue;
                    }
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let (r, c) = (self.height + 1 + gy * scale + dy, x + gx * scale + dx);
                            if c < out.width {
                                for k in 0..3 {
                                    out.set(r, c, k, 0.0);
                                }
                            }
                        }
                    }
                }
            }
            x += 4 * scale;
        }
        out
    }
}

fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch.to_ascii_uppercase() {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '/' => [0b001, 0b001, 0b010, 0b100, 0b100],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '(' => [0b001, 0b010, 0b010, 0b010, 0b001],
        ')' => [0b100, 0b010, 0b010, 0b010, 0b100],
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'N' => [0b101, 0b111, 0b111, 0b111, 0b101],
        _ => return None,
    })
}

/// Binary region-of-interest raster, `1` marking diagnostically relevant pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl RoiMask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                bits.len()
            )));
        }
        let bits = bits.into_iter().map(|b| u8::from(b != 0)).collect();
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Whole image marked as ROI.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<RoiMask> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::Shape("mask crop outside bounds".into()));
        }
        let mut bits = Vec::with_capacity(width * height);
        for r in row..row + height {
            bits.extend_from_slice(&self.bits[r * self.width + col..r * self.width + col + width]);
        }
        RoiMask::new(width, height, bits)
    }

    /// Any nonzero sample in any channel marks ROI.
    pub fn load(path: &Path) -> Result<RoiMask> {
        let dynamic = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = dynamic.dimensions();
        let rgba = dynamic.to_rgba16();
        let bits = rgba
            .pixels()
            .map(|p| u8::from(p.0[..3].iter().any(|&v| v != 0)))
            .collect();
        RoiMask::new(w as usize, h as usize, bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.bits.iter().map(|&b| b * 255).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("sized buffer");
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image {
        Image::from_fn(7, 5, 3, |r, c, ch| (r * 7 + c) as f32 / 35.0 * (ch + 1) as f32 / 3.0).unwrap()
    }

    #[test]
    fn png_round_trip_within_one_code() {
        let dir = tempfile::tempdir().unwrap();
        let img = ramp();
        let path = dir.path().join("ramp.png");
        img.save(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert!(back.same_shape(&img));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn sixteen_bit_sources_use_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![65535u16, 32768]).unwrap();
        buf.save(&path).unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data()[0], 1.0);
        assert!((img.data()[1] as f64 - 32768.0 / 65535.0).abs() < 1e-6);
    }

    #[test]
    fn values_are_clamped() {
        let img = Image::new(2, 1, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn tensor_round_trip_is_exact() {
        let img = ramp();
        let t = Image::batch_to_tensor::<f64>(&[&img, &img]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 5, 7]);
        assert_eq!(Image::from_tensor(&t, 1).unwrap(), img);
    }

    #[test]
    fn mask_loading_treats_nonzero_as_roi() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        image::GrayImage::from_raw(3, 1, vec![0, 1, 200]).unwrap().save(&path).unwrap();
        let mask = RoiMask::load(&path).unwrap();
        assert_eq!(mask.bits(), &[0, 1, 1]);
    }

    #[test]
    fn caption_adds_band() {
        let img = Image::filled(40, 10, 1, 0.5).unwrap();
        let out = img.with_caption("22.17 dB/0.59/6.38");
        assert_eq!(out.height(), 19);
        assert!(out.data().contains(&0.0));
    }
}
