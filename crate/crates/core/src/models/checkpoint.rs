//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"AVWWSCKP"  u32 version
//! u32 header_len, header_len bytes of JSON (modality, topology, fbank, stats)
//! u32 param_count
//! per parameter, in name order:
//!   u32 name_len, name bytes (UTF-8)
//!   u32 ndim, ndim x u64 dims
//!   f64 data (row-major)
//!   u8 has_mask, then ceil(len / 8) bytes of LSB-first mask bits when set
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::topology::{Modality, Topology};
use super::wws::WwsModel;
use crate::error::{Error, Result};
use crate::features::{FbankConfig, FbankStats};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"AVWWSCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    modality: Modality,
    topology: Topology,
    fbank: FbankConfig,
    stats: FbankStats,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
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
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")))
    }
}

impl WwsModel {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            modality: self.modality,
            topology: self.topology.clone(),
            fbank: self.fbank.clone(),
            stats: self.stats.clone(),
        })?;
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(&header);
        put_u32(&mut out, self.registry.len())?;
        for (name, p) in self.registry.iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, p.value.shape().len())?;
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            match &p.mask {
                None => out.push(0),
                Some(m) => {
                    out.push(1);
                    let mut bits = vec![0u8; m.len().div_ceil(8)];
                    for (i, &k) in m.data().iter().enumerate() {
                        if k != 0.0 {
                            bits[i / 8] |= 1 << (i % 8);
                        }
                    }
                    out.extend_from_slice(&bits);
                }
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = r.u32()?;
        let header: Header = serde_json::from_slice(r.take(hlen)?)?;
        let mut model = WwsModel::with_fbank(header.modality, header.topology, header.fbank, 0)?;
        model.stats = header.stats;
        let count = r.u32()?;
        if count != model.registry.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} parameters, topology defines {}",
                model.registry.len()
            )));
        }
        for _ in 0..count {
            let nlen = r.u32()?;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Format("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value =
                Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
            let p = model
                .registry
                .param_mut(&name)
                .map_err(|_| Error::Format(format!("unexpected parameter {name}")))?;
            if p.value.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "{name} has shape {:?}, topology expects {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
            let has_mask = r.take(1)?[0];
            match has_mask {
                0 => p.mask = None,
                1 => {
                    let bits = r.take(len.div_ceil(8))?;
                    let m = (0..len)
                        .map(|i| f64::from((bits[i / 8] >> (i % 8)) & 1))
                        .collect();
                    let shape = p.value.shape().to_vec();
                    model.registry.set_mask(&name, Tensor::new(shape, m)?)?;
                }
                other => return Err(Error::Format(format!("bad mask flag {other} for {name}"))),
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}
