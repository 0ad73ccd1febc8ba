//! Four-stage adversarial training loop, checkpoints and run logs.

mod checkpoint;
mod fit;
mod log;
mod step;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta, NetworkState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use fit::{checkpoint_path, fit, latest_checkpoint, log_path, FitOptions, FitSummary};
pub use log::{read_log, LogRow, LOG_HEADER};
pub use step::{AuditRecord, Network, Stage, StepLosses, StepReport, TrainState, Trainer};

use pathosr_tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::data::RoiConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::resample::LinearScale;

/// Which stages of the per-minibatch schedule run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Reconstruction only.
    Srnet,
    /// Reconstruction only, with an edge-weighted pixel term.
    SrnetW,
    /// Reconstruction plus the whole-image critic.
    T1,
    /// Reconstruction plus whole-image and ROI critics.
    T1T2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Srnet, Variant::SrnetW, Variant::T1, Variant::T1T2];

    pub fn runs_critics(self) -> bool {
        matches!(self, Variant::T1 | Variant::T1T2)
    }

    pub fn uses_roi_critic(self) -> bool {
        self == Variant::T1T2
    }

    pub fn edge_weighted(self) -> bool {
        self == Variant::SrnetW
    }

    /// Column label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Srnet => "SRNet",
            Variant::SrnetW => "SRNet-w",
            Variant::T1 => "T1",
            Variant::T1T2 => "T1+T2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown variant `{s}` (srnet, srnet_w, t1, t1_t2)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub init: u64,
    pub sampler: u64,
    pub crop: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            init: seed,
            sampler: seed.wrapping_add(1),
            crop: seed.wrapping_add(2),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iters: u64,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_interval: u64,
    pub batch_size: usize,
    pub linear_scale: LinearScale,
    pub loss: LossWeights,
    pub seeds: Seeds,
    pub checkpoint_interval: u64,
    pub variant: Variant,
    /// Iterations of reconstruction-only training before the adversarial
    /// stages switch on.
    pub pretrain_iters: u64,
    /// Side of the random HR crops fed to the networks; `None` trains on
    /// whole images, which must then share one size.
    pub crop_size: Option<usize>,
    pub roi: RoiConfig,
    /// Check stage isolation every this many iterations; 0 disables.
    pub audit_interval: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Entries kept in the in-memory loss history.
    pub history_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            total_iters: 500_000,
            base_lr: 1e-4,
            decay_factor: 0.5,
            decay_interval: 100_000,
            batch_size: 16,
            linear_scale: LinearScale::new(4).expect("supported"),
            loss: LossWeights::default(),
            seeds: Seeds::default(),
            checkpoint_interval: 10_000,
            variant: Variant::T1T2,
            pretrain_iters: 0,
            crop_size: Some(128),
            roi: RoiConfig::default(),
            audit_interval: 0,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            history_len: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.total_iters == 0 {
            return bad("total_iters must be positive".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor {} outside (0, 1]", self.decay_factor));
        }
        if self.decay_interval == 0 {
            return bad("decay_interval must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be positive".into());
        }
        if let Some(c) = self.crop_size {
            let s = self.linear_scale.get();
            if c == 0 || c % s != 0 {
                return bad(format!("crop_size {c} must be a positive multiple of the scale {s}"));
            }
            if self.variant.uses_roi_critic() && self.roi.patch_size > c {
                return bad(format!("ROI patch size {} exceeds crop size {c}", self.roi.patch_size));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        self.roi.validate()?;
        self.loss.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Step schedule: `base_lr * decay_factor ^ floor(iter / decay_interval)`.
pub fn lr_at_iteration(cfg: &TrainConfig, iter: u64) -> f64 {
    let k = (iter / cfg.decay_interval.max(1)).min(i32::MAX as u64) as i32;
    cfg.base_lr * cfg.decay_factor.powi(k)
}
