//! The single JSON document describing a run.

use std::path::{Path, PathBuf};

use pathosr_core::data::RoiConfig;
use pathosr_core::losses::LossWeights;
use pathosr_core::model::{CriticSpec, GeneratorSpec};
use pathosr_core::trainer::{CheckpointMeta, Seeds, TrainConfig, Variant};
use pathosr_core::{Error, LinearScale, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    /// Pristine NIQE model; the bundled one when absent.
    pub niqe_model: Option<PathBuf>,
    /// LR tile side for checkpoint inference.
    pub tile: usize,
    pub tile_overlap: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            niqe_model: None,
            tile: 128,
            tile_overlap: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// JSON Lines dataset manifest.
    pub manifest: PathBuf,
    /// Dataset name printed in reports; the manifest's parent directory
    /// name when absent.
    #[serde(default)]
    pub dataset_label: Option<String>,
    pub out_dir: PathBuf,
    pub generator: GeneratorSpec,
    pub critic_t1: CriticSpec,
    pub critic_t2: CriticSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// VGG19 safetensors for the perceptual term; pixel loss only when absent.
    #[serde(default)]
    pub perceptual_weights: Option<PathBuf>,
    #[serde(default)]
    pub metrics: MetricOptions,
    /// Test records rendered as preview panels at each checkpoint.
    #[serde(default = "default_preview_count")]
    pub preview_count: usize,
}

fn default_preview_count() -> usize {
    2
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Small networks and a short schedule for the synthetic smear corpus.
    pub fn toy(manifest: PathBuf, out_dir: PathBuf, scale: LinearScale, seed: u64) -> Self {
        let crop = if 64 % scale.get() == 0 { 64 } else { 48 };
        let patch = 32;
        Self {
            schema_version: SCHEMA_VERSION,
            manifest,
            dataset_label: Some("toy".into()),
            out_dir,
            generator: GeneratorSpec {
                n_rrdb_blocks: 1,
                base_channels: 16,
                growth_channels: 8,
                linear_scale: scale,
                ..Default::default()
            },
            critic_t1: CriticSpec::vgg_style(crop, 8),
            critic_t2: CriticSpec::vgg_style(patch, 8),
            train: TrainConfig {
                total_iters: 500,
                base_lr: 1e-3,
                batch_size: 4,
                linear_scale: scale,
                loss: LossWeights {
                    eta: 1.0,
                    lambda_t1: 1e-4,
                    lambda_t2: 1e-4,
                    ..Default::default()
                },
                seeds: Seeds::from_master(seed),
                checkpoint_interval: 100,
                variant: Variant::T1T2,
                crop_size: Some(crop),
                roi: RoiConfig {
                    patch_size: patch,
                    ..Default::default()
                },
                ..Default::default()
            },
            perceptual_weights: None,
            metrics: MetricOptions::default(),
            preview_count: default_preview_count(),
        }
    }

    /// Parses, resolves relative paths against the file's directory, and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.manifest);
        resolve(base, &mut cfg.out_dir);
        if let Some(p) = cfg.perceptual_weights.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.metrics.niqe_model.as_mut() {
            resolve(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            generator: self.generator.clone(),
            critic_t1: self.critic_t1.clone(),
            critic_t2: self.critic_t2.clone(),
            variant: self.train.variant,
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.metrics.tile == 0 {
            return Err(Error::Config("metrics.tile must be positive".into()));
        }
        self.meta().validate()
    }

    /// Sets the linear scale of both the generator and the schedule.
    pub fn set_scale(&mut self, scale: LinearScale) {
        self.generator.linear_scale = scale;
        self.train.linear_scale = scale;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seeds = Seeds::from_master(seed);
    }

    pub fn dataset_label(&self) -> String {
        self.dataset_label.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> RunConfig {
        RunConfig::toy("m.jsonl".into(), "run".into(), LinearScale::new(2).unwrap(), 1)
    }

    #[test]
    fn toy_configs_validate_at_every_scale() {
        for s in LinearScale::SUPPORTED {
            RunConfig::toy("m".into(), "o".into(), LinearScale::new(s).unwrap(), 0)
                .validate()
                .unwrap();
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&toy().to_json()).unwrap();
        v["train"]["learning_rate"] = 1.0.into();
        assert!(serde_json::from_value::<RunConfig>(v.clone()).is_err());
        v["train"].as_object_mut().unwrap().remove("learning_rate");
        v["extra"] = true.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        toy().save(&path).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest, dir.path().join("m.jsonl"));
        assert_eq!(cfg.out_dir, dir.path().join("run"));
    }

    #[test]
    fn schema_version_checked() {
        let mut cfg = toy();
        cfg.schema_version = 7;
        assert!(cfg.validate().unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn scale_override_keeps_specs_consistent() {
        let mut cfg = toy();
        cfg.set_scale(LinearScale::new(4).unwrap());
        cfg.validate().unwrap();
        assert_eq!(cfg.generator.linear_scale.get(), 4);
    }
}
