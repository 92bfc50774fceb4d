//! AQCK checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "AQCK" | version u32 | tensor count u32
//! per tensor: name length u32 | UTF-8 name | ndim u32 | dims u32 × ndim | f32 × Π dims
//! ```
//!
//! Model architecture and training metadata ride along as ordinary 1-D
//! tensors (`<prefix>meta/config/<preset>` and `meta/train`) holding small
//! integers, which f32 represents exactly.

use std::path::Path;

use super::{UNetConfig, UNetModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AQCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const CONFIG_TAG: &str = "meta/config/";
const TRAIN_TAG: &str = "meta/train";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainMeta {
    pub epoch: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of named tensors as stored in an AQCK file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<CheckpointTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.tensors.push(CheckpointTensor {
            name: name.into(),
            dims,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Appends a model's config and parameters under `prefix` (e.g. `"unet1/"`).
    pub fn push_model(&mut self, prefix: &str, model: &UNetModel<f32>) {
        let c = model.config();
        let mut cfg = vec![c.in_channels as f32, c.depth as f32];
        cfg.extend(c.encoder_block_convs.iter().map(|&v| v as f32));
        cfg.extend(c.encoder_channels.iter().map(|&v| v as f32));
        self.push(format!("{prefix}{CONFIG_TAG}{}", c.preset), vec![cfg.len()], cfg);
        for (name, t) in model.named_params() {
            self.push(format!("{prefix}{name}"), t.shape().dims().to_vec(), t.data().to_vec());
        }
    }

    pub fn has_model(&self, prefix: &str) -> bool {
        let tag = format!("{prefix}{CONFIG_TAG}");
        self.tensors.iter().any(|t| t.name.starts_with(&tag))
    }

    /// Rebuilds the model stored under `prefix`, validating every tensor's
    /// name and shape against the embedded config.
    pub fn model(&self, prefix: &str) -> Result<UNetModel<f32>> {
        let tag = format!("{prefix}{CONFIG_TAG}");
        let cfg_t = self
            .tensors
            .iter()
            .find(|t| t.name.starts_with(&tag))
            .ok_or_else(|| Error::CheckpointMismatch(format!("no model config under prefix `{prefix}`")))?;
        let config = decode_config(&cfg_t.name[tag.len()..], &cfg_t.data)?;
        let mut named = Vec::new();
        for (name, shape) in config.param_shapes() {
            let full = format!("{prefix}{name}");
            let t = self
                .get(&full)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor `{full}`")))?;
            if t.dims != shape.dims() {
                return Err(Error::CheckpointMismatch(format!(
                    "`{full}` has dims {:?}, config requires {shape}",
                    t.dims
                )));
            }
            named.push((name, Tensor4::from_vec(shape, t.data.clone())?));
        }
        UNetModel::from_params(config, named)
    }

    pub fn set_meta(&mut self, meta: TrainMeta) {
        self.tensors.retain(|t| t.name != TRAIN_TAG);
        let s = meta.seed;
        let data = vec![
            meta.epoch as f32,
            (s & 0xFFFF) as f32,
            ((s >> 16) & 0xFFFF) as f32,
            ((s >> 32) & 0xFFFF) as f32,
            ((s >> 48) & 0xFFFF) as f32,
        ];
        // epoch needs to stay exactly representable
        debug_assert!(meta.epoch < (1 << 24));
        self.push(TRAIN_TAG, vec![5], data);
    }

    pub fn meta(&self) -> Option<TrainMeta> {
        let t = self.get(TRAIN_TAG)?;
        if t.data.len() != 5 {
            return None;
        }
        let part = |i: usize| t.data[i] as u64;
        Some(TrainMeta {
            epoch: t.data[0] as u32,
            seed: part(1) | part(2) << 16 | part(3) << 32 | part(4) << 48,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic.to_vec(),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {version}")));
        }
        let count = r.u32("tensor count")? as usize;
        let mut ck = Checkpoint::new();
        for i in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|e| Error::Unsupported(format!("tensor {i} name is not UTF-8: {e}")))?
                .to_owned();
            let ndim = r.u32("ndim")? as usize;
            let dims = (0..ndim).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let raw = r.take(numel * 4, "tensor data")?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            ck.tensors.push(CheckpointTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Unsupported(format!("{} trailing bytes after last tensor", bytes.len() - r.pos)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn decode_config(preset: &str, v: &[f32]) -> Result<UNetConfig> {
    let bad = || Error::CheckpointMismatch(format!("malformed model config tensor ({} values)", v.len()));
    if v.len() < 2 {
        return Err(bad());
    }
    let depth = v[1] as usize;
    if v.len() != 2 + 2 * depth {
        return Err(bad());
    }
    let ints = |s: &[f32]| s.iter().map(|&x| x as usize).collect::<Vec<_>>();
    let config = UNetConfig {
        preset: preset.to_owned(),
        in_channels: v[0] as usize,
        depth,
        encoder_block_convs: ints(&v[2..2 + depth]),
        encoder_channels: ints(&v[2 + depth..]),
    };
    config.validate().map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    Ok(config)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!("{what}: need {n} bytes at offset {}, file has {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writes a single-model checkpoint with its parameters at the top level.
pub fn save_checkpoint(model: &UNetModel<f32>, meta: TrainMeta, path: impl AsRef<Path>) -> Result<()> {
    let mut ck = Checkpoint::new();
    ck.push_model("", model);
    ck.set_meta(meta);
    ck.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNetModel<f32>, TrainMeta)> {
    let ck = Checkpoint::load(path)?;
    let model = ck.model("")?;
    Ok((model, ck.meta().unwrap_or_default()))
}
