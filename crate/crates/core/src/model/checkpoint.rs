//! Single-file checkpoints.
//!
//! Layout: the magic `AVVPCKPT`, a little-endian `u32` format version, a `u32`
//! header length followed by a JSON header, then one block per tensor: `u16`
//! name length, the UTF-8 name, `u32` rows, `u32` cols and `rows·cols`
//! little-endian `f64` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::richness::LossConfig;

const MAGIC: &[u8; 8] = b"AVVPCKPT";
const VERSION: u32 = 1;

/// Where the training labels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelProvenance {
    Smoothed,
    Plg,
    Pld,
}

impl std::str::FromStr for LabelProvenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed" => Ok(Self::Smoothed),
            "plg" => Ok(Self::Plg),
            "pld" => Ok(Self::Pld),
            other => Err(Error::Config(format!("unknown label kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub loss: LossConfig,
    pub provenance: LabelProvenance,
    pub categories: Vec<String>,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    loss: LossConfig,
    provenance: LabelProvenance,
    categories: Vec<String>,
    blocks: Vec<String>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("refusing to write non-finite parameters".into()));
        }
        let names = Params::names();
        let header = serde_json::to_vec(&Header {
            config: self.config,
            loss: self.loss,
            provenance: self.provenance,
            categories: self.categories.clone(),
            blocks: names.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in names.iter().zip(self.params.tensors()) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        header.config.validate()?;
        let mut params = Params::zeros(header.config.d, header.categories.len());
        let expected = Params::names();
        if header.blocks != expected {
            return Err(Error::Checkpoint("unexpected block list".into()));
        }
        for (name, slot) in expected.iter().zip(params.tensors_mut()) {
            let n = r.u16()? as usize;
            let got = std::str::from_utf8(r.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if got != name {
                return Err(Error::Checkpoint(format!("expected block `{name}`, found `{got}`")));
            }
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "block `{name}` has shape {rows}×{cols}, expected {:?}",
                    slot.shape()
                )));
            }
            let data = r
                .take(rows * cols * 8)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            *slot = Matrix::from_vec(rows, cols, data)?;
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(Self {
            config: header.config,
            loss: header.loss,
            provenance: header.provenance,
            categories: header.categories,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
