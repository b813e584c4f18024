//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic "ORGNAVCK" | version u32 | meta_len u64 | meta JSON
//! | tensor_count u32 | { name_len u32 | name | rows u32 | cols u32 | f64 * rows*cols }
//! | SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::HarnessError;
use crate::diffcore::Tensor;
use crate::navpolicy::{NavParameters, NAV_TENSOR_COUNT, NAV_TENSOR_NAMES};
use crate::tpn::{TpnParameters, TPN_TENSOR_NAMES};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ORGNAVCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub nav_episodes_trained: u64,
    pub tpn_episodes_trained: u64,
    /// Seed that continues the training random stream.
    pub rng_seed: u64,
    /// Validation success of the stored navigation parameters, when measured.
    pub val_success: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub nav: NavParameters,
    pub tpn: Option<TpnParameters>,
}

impl Checkpoint {
    pub fn require_tpn(&self) -> Result<&TpnParameters, HarnessError> {
        self.tpn.as_ref().ok_or(HarnessError::TpnMissing)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("meta is plain data");
        let mut named: Vec<(&str, &Tensor)> = NAV_TENSOR_NAMES.iter().copied().zip(self.nav.tensors()).collect();
        if let Some(t) = &self.tpn {
            named.extend(TPN_TENSOR_NAMES.iter().copied().zip(t.tensors()));
        }
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(HarnessError::Checkpoint("not a checkpoint file".into()));
        }
        if bytes.len() < 8 + 4 + DIGEST_LEN {
            return Err(HarnessError::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(HarnessError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(HarnessError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| HarnessError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Tensor::new(rows, cols, data)?));
        }
        if r.pos != body.len() {
            return Err(HarnessError::Checkpoint("trailing bytes after tensors".into()));
        }
        let expected: Vec<&str> = match count {
            n if n == NAV_TENSOR_COUNT => NAV_TENSOR_NAMES.to_vec(),
            n if n == NAV_TENSOR_COUNT + TPN_TENSOR_NAMES.len() => {
                NAV_TENSOR_NAMES.iter().chain(&TPN_TENSOR_NAMES).copied().collect()
            }
            n => return Err(HarnessError::Checkpoint(format!("unexpected tensor count {n}"))),
        };
        for ((name, _), want) in tensors.iter().zip(&expected) {
            if name != want {
                return Err(HarnessError::Checkpoint(format!("tensor {name:?} where {want:?} expected")));
            }
        }
        let mut values: Vec<Tensor> = tensors.into_iter().map(|(_, t)| t).collect();
        let tpn_values = values.split_off(NAV_TENSOR_COUNT);
        let nav = NavParameters::from_tensors(values)?;
        let tpn = if tpn_values.is_empty() { None } else { Some(TpnParameters::from_tensors(tpn_values)?) };
        Ok(Checkpoint { meta, nav, tpn })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| HarnessError::Checkpoint("unexpected end of payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
