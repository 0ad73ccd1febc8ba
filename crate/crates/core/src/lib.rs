//! ROI-aware adversarial super-resolution for microscopy images.
//!
//! The crate covers the whole pipeline: manifest-driven datasets with
//! synthesized low-resolution inputs ([`data`]), the RRDB generator and
//! relativistic critics ([`model`]), their objectives ([`losses`]), the
//! four-stage training schedule ([`trainer`]) and evaluation ([`metrics`]).

pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod resample;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{Image, RoiMask};
pub use resample::LinearScale;
