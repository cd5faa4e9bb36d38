//! Checkpoint file.
//!
//! Little-endian:
//!
//! ```text
//! magic     8 bytes  "CCHCKPT\0"
//! version   u32      CHECKPOINT_VERSION
//! meta_len  u64
//! meta      meta_len bytes of JSON: config, step, RNG state, R1 mode,
//!           Adam step counts, and the name and shape of every block
//! blocks    per block, in the metadata order (sorted by name):
//!           values, first moments, second moments, each n × f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::RngState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CCHCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How the R1 penalty's parameter gradient is obtained.
pub const R1_MODE: &str = "jvp";

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub rng: RngState,
    pub r1_mode: String,
    pub adam_steps_g: u64,
    pub adam_steps_d: u64,
    /// Sorted by name.
    pub blocks: Vec<Block>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: TrainConfig,
    step: u64,
    rng: RngState,
    r1_mode: String,
    adam_steps_g: u64,
    adam_steps_d: u64,
    blocks: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks
            .binary_search_by(|b| b.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.blocks[i])
    }

    /// Copies stored values into every block of `params`, matched by name.
    pub fn apply_to(&self, params: &mut ParamSet) -> Result<()> {
        for i in 0..params.len() {
            let name = params.name(i).to_string();
            let b = self
                .block(&name)
                .ok_or_else(|| Error::format(format!("checkpoint lacks block {name}")))?;
            if b.value.shape() != params.get(i).shape() {
                return Err(Error::format(format!(
                    "block {name} has shape {:?}, expected {:?}",
                    b.value.shape(),
                    params.get(i).shape()
                )));
            }
            *params.get_mut(i) = b.value.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            config: self.config.clone(),
            step: self.step,
            rng: self.rng.clone(),
            r1_mode: self.r1_mode.clone(),
            adam_steps_g: self.adam_steps_g,
            adam_steps_d: self.adam_steps_d,
            blocks: self
                .blocks
                .iter()
                .map(|b| (b.name.clone(), b.value.shape().to_vec()))
                .collect(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::format(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 24 * self.blocks.iter().map(|b| b.m.len()).sum::<usize>() + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blocks {
            for x in b.value.data().iter().chain(&b.m).chain(&b.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::format("checkpoint is truncated");
        if bytes.len() < 20 {
            return Err(truncated());
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json = bytes.get(20..20usize.saturating_add(len)).ok_or_else(truncated)?;
        let meta: Meta = serde_json::from_slice(json).map_err(|e| Error::format(format!("checkpoint metadata: {e}")))?;
        let mut pos = 20 + len;
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let end = pos.checked_add(n * 8).filter(|e| *e <= bytes.len()).ok_or_else(truncated)?;
            let v = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos = end;
            Ok(v)
        };
        let mut blocks = Vec::with_capacity(meta.blocks.len());
        for (name, shape) in meta.blocks {
            let n = shape.iter().product();
            let value = Tensor::new(shape, read(n)?)?;
            let m = read(n)?;
            let v = read(n)?;
            blocks.push(Block { name, value, m, v });
        }
        if pos != bytes.len() {
            return Err(Error::format("trailing bytes after checkpoint data"));
        }
        if blocks.windows(2).any(|w| w[0].name >= w[1].name) {
            return Err(Error::format("checkpoint blocks are not sorted by name"));
        }
        Ok(Checkpoint {
            config: meta.config,
            step: meta.step,
            rng: meta.rng,
            r1_mode: meta.r1_mode,
            adam_steps_g: meta.adam_steps_g,
            adam_steps_d: meta.adam_steps_d,
            blocks,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
