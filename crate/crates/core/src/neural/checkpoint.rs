//! Checkpoint file layout:
//!
//! ```text
//! "GTCKPT1\n"
//! u64 LE   header length in bytes
//! header   JSON: format, precision, network spec, block table, Adam state, counters
//! params   little-endian floats, blocks in spec order
//! adam m   same layout (only when the header carries Adam state)
//! adam v
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Network, NetworkSpec, NeuralError};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GTCKPT1\n";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Round-trips bit-exactly.
    #[default]
    F64,
    F32,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }
}

/// Training counters and free-form metadata stored beside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub episodes: u64,
    pub gradient_steps: u64,
    #[serde(default)]
    pub rng: Option<serde_json::Value>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: u32,
    precision: Precision,
    spec: NetworkSpec,
    blocks: Vec<BlockInfo>,
    adam: Option<AdamHeader>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub adam: Option<Adam>,
    pub meta: CheckpointMeta,
}

fn fail(path: &Path, reason: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self, precision: Precision) -> Result<Vec<u8>, NeuralError> {
        let header = Header {
            format: FORMAT_VERSION,
            precision,
            spec: self.network.spec().clone(),
            blocks: self
                .network
                .blocks()
                .iter()
                .map(|b| BlockInfo {
                    name: b.name.clone(),
                    len: b.len,
                })
                .collect(),
            adam: self.adam.as_ref().map(|a| AdamHeader {
                config: a.config,
                step: a.step_count(),
            }),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header)
            .map_err(|e| NeuralError::Shape(format!("unserializable header: {e}")))?;
        let n = self.network.param_count();
        let arrays = if self.adam.is_some() { 3 } else { 1 };
        let mut out = Vec::with_capacity(16 + header.len() + arrays * n * precision.width());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |values: &[f64]| {
            for &v in values {
                match precision {
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        };
        put(self.network.params());
        if let Some(adam) = &self.adam {
            put(adam.first_moment());
            put(adam.second_moment());
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>, precision: Precision) -> Result<(), NeuralError> {
        write_atomic(path.as_ref(), &self.to_bytes(precision)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, NeuralError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and refuses checkpoints whose network spec differs from `spec`.
    pub fn load_expecting(
        path: impl AsRef<Path>,
        spec: &NetworkSpec,
    ) -> Result<Checkpoint, NeuralError> {
        let path = path.as_ref();
        let ckpt = Self::load(path)?;
        if ckpt.network.spec() != spec {
            return Err(fail(
                path,
                format!(
                    "shape mismatch: checkpoint holds {:?}, expected {:?}",
                    ckpt.network.spec().layers,
                    spec.layers
                ),
            ));
        }
        Ok(ckpt)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint, NeuralError> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err(fail(path, format!("truncated: only {} bytes", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail(path, "not a checkpoint (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < header_len {
            return Err(fail(
                path,
                format!(
                    "truncated header: need {header_len} bytes, have {}",
                    body.len()
                ),
            ));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| fail(path, format!("malformed header: {e}")))?;
        if header.format != FORMAT_VERSION {
            return Err(fail(
                path,
                format!(
                    "unsupported format version {} (expected {FORMAT_VERSION})",
                    header.format
                ),
            ));
        }
        let expected_blocks = header.spec.param_blocks();
        let blocks_match = expected_blocks.len() == header.blocks.len()
            && expected_blocks
                .iter()
                .zip(&header.blocks)
                .all(|(e, b)| e.name == b.name && e.len == b.len);
        if !blocks_match {
            return Err(fail(
                path,
                "shape mismatch: block table disagrees with network spec",
            ));
        }

        let n = header.spec.param_count();
        let arrays = if header.adam.is_some() { 3 } else { 1 };
        let width = header.precision.width();
        let data = &body[header_len..];
        let needed = arrays * n * width;
        if data.len() != needed {
            return Err(fail(
                path,
                if data.len() < needed {
                    format!(
                        "truncated: expected {needed} bytes of parameter data, found {}",
                        data.len()
                    )
                } else {
                    format!(
                        "{} trailing bytes after parameter data",
                        data.len() - needed
                    )
                },
            ));
        }
        let read = |k: usize| -> Vec<f64> {
            data[k * n * width..(k + 1) * n * width]
                .chunks_exact(width)
                .map(|c| match header.precision {
                    Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                    Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                })
                .collect()
        };
        let network = Network::from_params(header.spec, read(0))?;
        let adam = match header.adam {
            Some(a) => Some(Adam::from_state(a.config, a.step, read(1), read(2))?),
            None => None,
        };
        Ok(Checkpoint {
            network,
            adam,
            meta: header.meta,
        })
    }
}
