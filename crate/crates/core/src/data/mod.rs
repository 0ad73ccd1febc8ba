//! Dataset ingestion, LR synthesis, batching, and ROI patch proposal.

mod dataset;
mod manifest;
mod roi;
mod sampler;
pub mod synthetic;

pub use dataset::{Dataset, SamplePair};
pub use manifest::{load_manifest, DatasetIndex, RecordDescriptor, Split};
pub use roi::{propose_roi_patches, propose_roi_windows, RoiConfig, RoiPatchPair, RoiWindow};
pub use sampler::{batches_per_epoch, BatchSampler, SamplerState};
