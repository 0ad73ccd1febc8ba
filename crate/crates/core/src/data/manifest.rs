use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::LinearScale;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line: `{"id": .., "hr": .., "mask": ..|null, "split": "train"|"test"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordDescriptor {
    pub id: String,
    pub hr: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    pub split: Split,
}

/// Immutable view of a dataset manifest. Paths are resolved against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub records: Vec<RecordDescriptor>,
    pub scale: LinearScale,
    pub patch_size: usize,
}

impl DatasetIndex {
    pub const DEFAULT_PATCH_SIZE: usize = 64;

    pub fn new(records: Vec<RecordDescriptor>, scale: LinearScale, patch_size: usize) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Load {
                    id: r.id.clone(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(Self {
            records,
            scale,
            patch_size,
        })
    }

    pub fn with_scale(mut self, scale: LinearScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_patch_size(mut self, patch_size: usize) -> Self {
        self.patch_size = patch_size;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    /// Sub-index restricted to one split, order preserved.
    pub fn split(&self, split: Split) -> DatasetIndex {
        DatasetIndex {
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
            scale: self.scale,
            patch_size: self.patch_size,
        }
    }
}

/// Parses a JSON Lines manifest and checks every referenced file exists.
///
/// Blank lines are ignored. The index uses linear scale 4 and patch size 64
/// until overridden with [`DatasetIndex::with_scale`] / `with_patch_size`.
pub fn load_manifest(path: &Path) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: RecordDescriptor = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.hr = base.join(&rec.hr);
        rec.mask = rec.mask.map(|m| base.join(m));
        for (what, p) in [("hr image", Some(&rec.hr)), ("mask", rec.mask.as_ref())] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Load {
                        id: rec.id.clone(),
                        message: format!("{what} {} does not exist", p.display()),
                    });
                }
            }
        }
        records.push(rec);
    }
    DatasetIndex::new(records, LinearScale::new(4)?, DatasetIndex::DEFAULT_PATCH_SIZE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn touch(dir: &Path, name: &str) {
        fs::File::create(dir.join(name)).unwrap().write_all(b"x").unwrap();
    }

    #[test]
    fn split_counts_for_thirty_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = String::new();
        for i in 0..33 {
            let name = format!("im{:03}.jpg", i + 1);
            touch(dir.path(), &name);
            let split = if i < 30 { "train" } else { "test" };
            lines += &format!("{{\"id\":\"Im{:03}\",\"hr\":\"{name}\",\"mask\":null,\"split\":\"{split}\"}}\n", i + 1);
        }
        fs::write(dir.path().join("all.jsonl"), lines).unwrap();
        let index = load_manifest(&dir.path().join("all.jsonl")).unwrap();
        assert_eq!(index.len(), 33);
        assert_eq!(index.count(Split::Train), 30);
        assert_eq!(index.count(Split::Test), 3);
        assert!(index.records[0].hr.is_absolute() || index.records[0].hr.starts_with(dir.path()));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.jsonl"), "").unwrap();
        assert!(load_manifest(&dir.path().join("m.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn missing_mask_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        fs::write(
            dir.path().join("m.jsonl"),
            "{\"id\":\"cell-7\",\"hr\":\"a.png\",\"mask\":\"nope.png\",\"split\":\"train\"}\n",
        )
        .unwrap();
        let err = load_manifest(&dir.path().join("m.jsonl")).unwrap_err();
        assert!(matches!(&err, Error::Load { id, .. } if id == "cell-7"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        fs::write(
            dir.path().join("m.jsonl"),
            "{\"id\":\"a\",\"hr\":\"a.png\",\"split\":\"train\"}\n\n{\"id\": 3\n",
        )
        .unwrap();
        let err = load_manifest(&dir.path().join("m.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        let line = "{\"id\":\"a\",\"hr\":\"a.png\",\"split\":\"train\"}\n";
        fs::write(dir.path().join("m.jsonl"), line.repeat(2)).unwrap();
        assert!(load_manifest(&dir.path().join("m.jsonl")).is_err());
    }
}
