//! Single-file training checkpoint.
//!
//! Layout (little-endian): magic, `u32` format version, `u8` dtype code,
//! `u64` iteration, length-prefixed JSON metadata, then for each of G, T1
//! and T2 the named parameter blobs followed by Adam state, then sampler
//! state, crop RNG state, loss history, and a SHA-256 of everything before.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use pathosr_tensor::{Adam, AdamConfig, DType, Float, ParamSet, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{StepLosses, TrainConfig, Variant};
use crate::data::SamplerState;
use crate::model::{CriticSpec, GeneratorSpec};
use rand::SeedableRng;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PATHOSR\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("stored dtype {found} but {expected} was requested")]
    DType { found: String, expected: &'static str },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub generator: GeneratorSpec,
    pub critic_t1: CriticSpec,
    pub critic_t2: CriticSpec,
    pub variant: Variant,
    pub train: TrainConfig,
}

impl CheckpointMeta {
    /// Checks every spec and their mutual consistency.
    pub fn validate(&self) -> crate::Result<()> {
        let cfg = &self.train;
        cfg.validate()?;
        self.generator.validate()?;
        if self.generator.linear_scale != cfg.linear_scale {
            return Err(crate::Error::Config(format!(
                "generator scale {} differs from training scale {}",
                self.generator.linear_scale, cfg.linear_scale
            )));
        }
        if cfg.variant.runs_critics() {
            self.critic_t1.validate()?;
            if let Some(c) = cfg.crop_size {
                if self.critic_t1.input_size != c {
                    return Err(crate::Error::Config(format!(
                        "whole-image critic input {} differs from crop size {c}",
                        self.critic_t1.input_size
                    )));
                }
            }
        }
        if cfg.variant.uses_roi_critic() {
            self.critic_t2.validate()?;
        }
        if cfg.variant.uses_roi_critic() && self.critic_t2.input_size != cfg.roi.patch_size {
            return Err(crate::Error::Config(format!(
                "ROI critic input {} differs from patch size {}",
                self.critic_t2.input_size, cfg.roi.patch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<F> {
    pub params: ParamSet<F>,
    pub adam: Adam<F>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub iteration: u64,
    pub meta: CheckpointMeta,
    pub generator: NetworkState<F>,
    pub t1: NetworkState<F>,
    pub t2: NetworkState<F>,
    pub sampler: SamplerState,
    pub crop_rng: ChaCha8Rng,
    pub history: Vec<StepLosses>,
}

fn write_tensor_data<F: Float>(out: &mut Vec<u8>, t: &Tensor<F>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

fn write_network<F: Float>(out: &mut Vec<u8>, net: &NetworkState<F>) -> std::io::Result<()> {
    out.write_u32::<LE>(net.params.len() as u32)?;
    for (name, t) in net.params.iter() {
        out.write_u16::<LE>(name.len() as u16)?;
        out.write_all(name.as_bytes())?;
        out.write_u8(F::DTYPE.code())?;
        out.write_u8(t.shape().len() as u8)?;
        for &d in t.shape() {
            out.write_u64::<LE>(d as u64)?;
        }
        write_tensor_data(out, t);
    }
    let adam = &net.adam;
    out.write_u64::<LE>(adam.step)?;
    out.write_f64::<LE>(adam.config.beta1)?;
    out.write_f64::<LE>(adam.config.beta2)?;
    out.write_f64::<LE>(adam.config.eps)?;
    for t in adam.first_moment.iter().chain(&adam.second_moment) {
        write_tensor_data(out, t);
    }
    Ok(())
}

fn encode<F: Float>(ckpt: &Checkpoint<F>) -> crate::Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u32::<LE>(CHECKPOINT_VERSION)?;
    out.write_u8(F::DTYPE.code())?;
    out.write_u64::<LE>(ckpt.iteration)?;
    let meta = serde_json::to_vec(&ckpt.meta)?;
    out.write_u32::<LE>(meta.len() as u32)?;
    out.extend_from_slice(&meta);
    for net in [&ckpt.generator, &ckpt.t1, &ckpt.t2] {
        write_network(&mut out, net)?;
    }
    out.write_u64::<LE>(ckpt.sampler.seed)?;
    out.write_u64::<LE>(ckpt.sampler.epoch)?;
    out.write_u64::<LE>(ckpt.sampler.cursor)?;
    out.extend_from_slice(&ckpt.crop_rng.get_seed());
    out.write_u64::<LE>(ckpt.crop_rng.get_stream())?;
    out.write_u128::<LE>(ckpt.crop_rng.get_word_pos())?;
    out.write_u32::<LE>(ckpt.history.len() as u32)?;
    for h in &ckpt.history {
        out.write_u64::<LE>(h.iter)?;
        for v in [h.lr, h.j_recon, h.j_t1, h.j_t2, h.j_adv] {
            out.write_f64::<LE>(v)?;
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes atomically: the bytes go to a sibling temporary file that is then
/// renamed over `path`.
pub fn save_checkpoint<F: Float>(ckpt: &Checkpoint<F>, path: &Path) -> crate::Result<()> {
    let bytes = encode(ckpt)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn io<T>(&mut self, r: std::io::Result<T>) -> Result<T, CheckpointError> {
        r.map_err(|_| corrupt("unexpected end of data"))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        let r = self.cur.read_u8();
        self.io(r)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let r = self.cur.read_u16::<LE>();
        self.io(r)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let r = self.cur.read_u32::<LE>();
        self.io(r)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let r = self.cur.read_u64::<LE>();
        self.io(r)
    }

    fn u128(&mut self) -> Result<u128, CheckpointError> {
        let r = self.cur.read_u128::<LE>();
        self.io(r)
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let r = self.cur.read_f64::<LE>();
        self.io(r)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, CheckpointError> {
        let remaining = self.cur.get_ref().len() - self.cur.position() as usize;
        if n > remaining {
            return Err(corrupt("unexpected end of data"));
        }
        let mut buf = vec![0; n];
        let r = self.cur.read_exact(&mut buf);
        self.io(r)?;
        Ok(buf)
    }

    fn tensor<F: Float>(&mut self, shape: &[usize]) -> Result<Tensor<F>, CheckpointError> {
        let n: usize = shape.iter().product();
        let raw = self.bytes(n * F::DTYPE.size_bytes())?;
        let data = raw.chunks_exact(F::DTYPE.size_bytes()).map(F::read_le).collect();
        Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
    }

    fn network<F: Float>(&mut self) -> Result<NetworkState<F>, CheckpointError> {
        let count = self.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = self.u16()? as usize;
            let name = String::from_utf8(self.bytes(len)?).map_err(|_| corrupt("parameter name not UTF-8"))?;
            let code = self.u8()?;
            if code != F::DTYPE.code() {
                return Err(corrupt(format!("parameter {name} has dtype code {code}")));
            }
            let ndim = self.u8()? as usize;
            let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let t = self.tensor(&shape)?;
            params.push(name, t);
        }
        let step = self.u64()?;
        let config = AdamConfig {
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
        };
        let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let first_moment = shapes.iter().map(|s| self.tensor(s)).collect::<Result<_, _>>()?;
        let second_moment = shapes.iter().map(|s| self.tensor(s)).collect::<Result<_, _>>()?;
        Ok(NetworkState {
            params,
            adam: Adam {
                config,
                step,
                first_moment,
                second_moment,
            },
        })
    }
}

fn decode<F: Float>(bytes: &[u8]) -> Result<Checkpoint<F>, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 13 + DIGEST_LEN {
        return Err(corrupt("file too short"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let dtype = bytes[12];
    if dtype != F::DTYPE.code() {
        return Err(CheckpointError::DType {
            found: DType::from_code(dtype).map_or_else(|| format!("code {dtype}"), |d| d.name().to_owned()),
            expected: F::DTYPE.name(),
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader {
        cur: Cursor::new(body),
    };
    r.cur.set_position(13);
    let iteration = r.u64()?;
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(&r.bytes(meta_len)?).map_err(|e| corrupt(format!("metadata: {e}")))?;
    let generator = r.network()?;
    let t1 = r.network()?;
    let t2 = r.network()?;
    let sampler = SamplerState {
        seed: r.u64()?,
        epoch: r.u64()?,
        cursor: r.u64()?,
    };
    let seed: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
    let mut crop_rng = ChaCha8Rng::from_seed(seed);
    crop_rng.set_stream(r.u64()?);
    crop_rng.set_word_pos(r.u128()?);
    let n = r.u32()? as usize;
    let mut history = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        history.push(StepLosses {
            iter: r.u64()?,
            lr: r.f64()?,
            j_recon: r.f64()?,
            j_t1: r.f64()?,
            j_t2: r.f64()?,
            j_adv: r.f64()?,
        });
    }
    if r.cur.position() as usize != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Checkpoint {
        iteration,
        meta,
        generator,
        t1,
        t2,
        sampler,
        crop_rng,
        history,
    })
}

/// Reads a checkpoint written by [`save_checkpoint`]; nothing is returned
/// unless the whole file validates.
pub fn load_checkpoint<F: Float>(path: &Path) -> crate::Result<Checkpoint<F>> {
    let bytes = std::fs::read(path)?;
    Ok(decode(&bytes)?)
}
