//! Binary checkpoints. Layout, all integers little-endian:
//!
//! ```text
//! b"PRL1" | version: u32 | header_len: u64 | header (JSON) | f64 blobs
//! ```
//!
//! The header lists every parameter's name and shape in blob order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::prl::{param_specs, PrlModel};
use crate::autodiff::Tensor;
use crate::corpus::{TagSet, Vocab};
use crate::error::{CheckpointError, Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PRL1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Refuse headers larger than this before allocating for them.
const MAX_HEADER: u64 = 64 << 20;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    params: Vec<ParamEntry>,
    vocab: Vocab,
    tags: TagSet,
    #[serde(default)]
    hyper: serde_json::Value,
}

/// A model together with the vocabulary and tag set it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: PrlModel,
    pub vocab: Vocab,
    pub tags: TagSet,
    /// Free-form training hyperparameters, stored for provenance.
    pub hyper: serde_json::Value,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

impl Checkpoint {
    pub fn new(model: PrlModel, vocab: Vocab, tags: TagSet) -> Result<Self> {
        let cfg = model.config();
        if vocab.len() != cfg.vocab_size || tags.len() != cfg.num_tags {
            return Err(Error::Schema(format!(
                "model expects {} words and {} tags, got {} and {}",
                cfg.vocab_size,
                cfg.num_tags,
                vocab.len(),
                tags.len()
            )));
        }
        Ok(Checkpoint {
            model,
            vocab,
            tags,
            hyper: serde_json::Value::Null,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.model.config().clone(),
            params: self
                .model
                .params()
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
            vocab: self.vocab.clone(),
            tags: self.tags.clone(),
            hyper: self.hyper.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let blob_len: usize = self.model.num_parameters() * 8;
        let mut out = Vec::with_capacity(16 + json.len() + blob_len);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if header_len > MAX_HEADER {
            return Err(CheckpointError::Header(format!(
                "header length {header_len} is too large"
            ))
            .into());
        }
        let header: Header = serde_json::from_slice(r.take(header_len as usize)?)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        header
            .config
            .validate()
            .map_err(|e| CheckpointError::Header(e.to_string()))?;

        let specs = param_specs(&header.config);
        if specs.len() != header.params.len() {
            return Err(CheckpointError::Header(format!(
                "config implies {} parameters, header lists {}",
                specs.len(),
                header.params.len()
            ))
            .into());
        }
        let mut total: usize = 0;
        for ((name, _, shape), entry) in specs.iter().zip(&header.params) {
            if *name != entry.name || *shape != entry.shape {
                return Err(CheckpointError::Shape {
                    name: entry.name.clone(),
                    found: entry.shape.clone(),
                    expected: shape.clone(),
                }
                .into());
            }
            total += shape.iter().product::<usize>();
        }
        let remaining = bytes.len() - r.pos;
        let needed = total
            .checked_mul(8)
            .ok_or_else(|| CheckpointError::Header("parameter size overflows".into()))?;
        if needed > remaining {
            return Err(CheckpointError::Truncated {
                offset: r.pos,
                needed,
                available: remaining,
            }
            .into());
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, _, shape) in &specs {
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::NonFinite(name.clone()).into());
            }
            tensors.push(Tensor::new(shape.clone(), data)?);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos).into());
        }
        let model = PrlModel::from_params(header.config, tensors)?;
        let mut ck = Checkpoint::new(model, header.vocab, header.tags)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        ck.hyper = header.hyper;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Loads and requires the stored architecture to equal `expected`.
    pub fn load_with_config(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let found = ck.model.config();
        if found.head != expected.head {
            return Err(Error::Schema(format!(
                "checkpoint has head {:?}, config expects {:?}",
                found.head, expected.head
            )));
        }
        if found != expected {
            return Err(Error::Schema(
                "checkpoint architecture differs from the config".into(),
            ));
        }
        Ok(ck)
    }
}
