//! Self-describing checkpoint files.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! magic        8 bytes  "DNETCKPT"
//! version      u32
//! header_len   u32
//! header       header_len bytes of compact JSON:
//!              { architecture, architecture_hash, precision,
//!                preprocessor?, history?, train_config? }
//! record_count u32
//! records      record_count times:
//!                name_len u16 | name (UTF-8)
//!                dtype    u8   (1 = f64, 2 = f32)
//!                trainable u8  (0 or 1)
//!                rank     u8   | rank x u32 dims
//!                values   product(dims) x dtype, row-major
//! digest       32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Records appear in parameter-store order, which is fixed by the
//! architecture, so saving a loaded checkpoint reproduces the same bytes.
//! Batch-norm running statistics are records with `trainable = 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{History, TrainConfig};
use crate::data::Preprocessor;
use crate::digest::sha256;
use crate::error::{Error, Result};
use crate::net::{ArchitectureConfig, Network};
use crate::tensor::{Precision, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DNETCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureConfig,
    architecture_hash: String,
    precision: Precision,
    preprocessor: Option<Preprocessor>,
    history: Option<History>,
    train_config: Option<TrainConfig>,
}

/// A network plus everything needed to apply it to raw records.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub preprocessor: Option<Preprocessor>,
    pub history: Option<History>,
    pub train_config: Option<TrainConfig>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Checkpoint {
            network,
            preprocessor: None,
            history: None,
            train_config: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let net = &self.network;
        let header = serde_json::to_vec(&Header {
            architecture: net.config.clone(),
            architecture_hash: net.config.hash(),
            precision: net.precision,
            preprocessor: self.preprocessor.clone(),
            history: self.history.clone(),
            train_config: self.train_config.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(net.params.len() as u32).to_le_bytes());
        let dtype = match net.precision {
            Precision::Double => DTYPE_F64,
            Precision::Single => DTYPE_F32,
        };
        for (_, p) in net.params.iter() {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(dtype);
            out.push(u8::from(p.trainable));
            out.push(p.value.rank() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                match dtype {
                    DTYPE_F64 => out.extend_from_slice(&v.to_le_bytes()),
                    _ => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        let digest = sha256(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parse a checkpoint. Any inconsistency fails the whole load.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a DNETCKPT file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint",
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 12 + 32 {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if sha256(body) != digest {
            return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted file)".into()));
        }
        let mut r = Reader { bytes: body, at: 12 };
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        if header.architecture.hash() != header.architecture_hash {
            return Err(Error::Checkpoint(format!(
                "architecture hash mismatch: header records {}, config hashes to {}",
                header.architecture_hash,
                header.architecture.hash()
            )));
        }
        let mut network = Network::build(&header.architecture, 0)?;
        network.precision = header.precision;
        let count = r.u32()? as usize;
        if count != network.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {count} tensors, architecture defines {}",
                network.params.len()
            )));
        }
        let mut seen = vec![false; network.params.len()];
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let trainable = r.u8()? != 0;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let id = network
                .params
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name:?}")))?;
            let param = network.params.param(id);
            if param.value.shape() != shape.as_slice() || param.trainable != trainable {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} is {shape:?} (trainable {trainable}), architecture expects {:?} (trainable {})",
                    param.value.shape(),
                    param.trainable
                )));
            }
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::Checkpoint(format!("tensor {name:?} appears twice")));
            }
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match dtype {
                DTYPE_F64 => r
                    .take(n * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                DTYPE_F32 => r
                    .take(n * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                other => return Err(Error::Checkpoint(format!("tensor {name:?} has unknown dtype {other}"))),
            };
            *network.params.get_mut(id) = Tensor::new(shape, data)?;
        }
        if r.at != body.len() {
            return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
        }
        Ok(Checkpoint {
            network,
            preprocessor: header.preprocessor,
            history: header.history,
            train_config: header.train_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and require the stored architecture to hash like `expected`.
    pub fn load_expecting(path: &Path, expected: &ArchitectureConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.network.config.hash() != expected.hash() {
            return Err(Error::Checkpoint(format!(
                "architecture hash mismatch: checkpoint {} vs expected {}",
                ckpt.network.config.hash(),
                expected.hash()
            )));
        }
        Ok(ckpt)
    }
}
