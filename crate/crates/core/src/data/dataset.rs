use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use super::{DatasetIndex, RecordDescriptor, Split};
use crate::error::{Error, Result};
use crate::image::{Image, RoiMask};
use crate::resample::{synthesize_lr, LinearScale};

/// One training/evaluation record with its synthesized LR counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub hr: Image,
    pub lr: Image,
    pub mask: RoiMask,
    pub split: Split,
}

impl SamplePair {
    /// Pairs an HR image with its mask, synthesizing the LR image.
    pub fn synthesize(
        id: impl Into<String>,
        hr: Image,
        mask: Option<RoiMask>,
        split: Split,
        scale: LinearScale,
    ) -> Result<Self> {
        let id = id.into();
        let mask = mask.unwrap_or_else(|| RoiMask::full(hr.width(), hr.height()));
        if (mask.width(), mask.height()) != (hr.width(), hr.height()) {
            return Err(Error::Load {
                id,
                message: format!(
                    "mask {}x{} does not match image {}x{}",
                    mask.height(),
                    mask.width(),
                    hr.height(),
                    hr.width()
                ),
            });
        }
        let lr = synthesize_lr(&hr, scale)?;
        Ok(Self {
            id,
            hr,
            lr,
            mask,
            split,
        })
    }

    /// Aligned crop: HR/mask at `(row, col)` with side `size`, LR at the
    /// corresponding `(row/s, col/s)` with side `size/s`. All three must be
    /// multiples of the scale.
    pub fn crop(&self, row: usize, col: usize, size: usize, scale: LinearScale) -> Result<SamplePair> {
        let s = scale.get();
        if !row.is_multiple_of(s) || !col.is_multiple_of(s) || !size.is_multiple_of(s) {
            return Err(Error::Shape(format!("crop ({row},{col},{size}) not aligned to scale {s}")));
        }
        Ok(SamplePair {
            id: self.id.clone(),
            hr: self.hr.crop(row, col, size, size)?,
            lr: self.lr.crop(row / s, col / s, size / s, size / s)?,
            mask: self.mask.crop(row, col, size, size)?,
            split: self.split,
        })
    }
}

fn load_record(rec: &RecordDescriptor, scale: LinearScale) -> Result<SamplePair> {
    let wrap = |e: Error| match e {
        Error::Load { .. } => e,
        other => Error::Load {
            id: rec.id.clone(),
            message: other.to_string(),
        },
    };
    let hr = Image::load(&rec.hr).map_err(wrap)?;
    let mask = rec.mask.as_deref().map(RoiMask::load).transpose().map_err(wrap)?;
    SamplePair::synthesize(rec.id.clone(), hr, mask, rec.split, scale).map_err(wrap)
}

/// Manifest-backed dataset. Images are decoded and their LR counterparts
/// synthesized on first access, then cached for the lifetime of the value.
#[derive(Debug)]
pub struct Dataset {
    index: DatasetIndex,
    cache: Vec<OnceLock<Arc<SamplePair>>>,
}

impl Dataset {
    pub fn new(index: DatasetIndex) -> Self {
        let cache = (0..index.len()).map(|_| OnceLock::new()).collect();
        Self { index, cache }
    }

    /// In-memory dataset; no files are touched.
    pub fn from_pairs(pairs: Vec<SamplePair>, scale: LinearScale, patch_size: usize) -> Result<Self> {
        let records = pairs
            .iter()
            .map(|p| RecordDescriptor {
                id: p.id.clone(),
                hr: format!("<memory>/{}", p.id).into(),
                mask: None,
                split: p.split,
            })
            .collect();
        let index = DatasetIndex::new(records, scale, patch_size)?;
        let cache = pairs
            .into_iter()
            .map(|p| {
                let cell = OnceLock::new();
                let _ = cell.set(Arc::new(p));
                cell
            })
            .collect();
        Ok(Self { index, cache })
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    pub fn scale(&self) -> LinearScale {
        self.index.scale
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    fn cached(&self, i: usize) -> Result<Arc<SamplePair>> {
        if let Some(p) = self.cache[i].get() {
            return Ok(p.clone());
        }
        let loaded = Arc::new(load_record(&self.index.records[i], self.index.scale)?);
        // A concurrent loader may have won; both produced identical values.
        Ok(self.cache[i].get_or_init(|| loaded).clone())
    }

    pub fn sample(&self, i: usize) -> Result<SamplePair> {
        if i >= self.len() {
            return Err(Error::Shape(format!("sample {i} of {}", self.len())));
        }
        Ok((*self.cached(i)?).clone())
    }

    /// Decodes every record up front, in parallel.
    pub fn preload(&self) -> Result<()> {
        (0..self.len()).into_par_iter().try_for_each(|i| self.cached(i).map(|_| ()))
    }

    /// Records of one split, sharing already-decoded samples.
    pub fn subset(&self, split: Split) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.index.records[i].split == split)
            .collect();
        let index = DatasetIndex {
            records: keep.iter().map(|&i| self.index.records[i].clone()).collect(),
            scale: self.index.scale,
            patch_size: self.index.patch_size,
        };
        let cache = keep
            .iter()
            .map(|&i| {
                let cell = OnceLock::new();
                if let Some(p) = self.cache[i].get() {
                    let _ = cell.set(p.clone());
                }
                cell
            })
            .collect();
        Dataset { index, cache }
    }

    pub fn samples(&self, indices: &[usize]) -> Result<Vec<SamplePair>> {
        indices.iter().map(|&i| self.sample(i)).collect()
    }
}
