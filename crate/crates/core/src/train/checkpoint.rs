//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"EPVTCKPT"
//! u32    format version
//! u64    payload length
//! payload:
//!   u32 + UTF-8   header, one `key = value` per line
//!   u32           array count
//!   per array:    u16 + UTF-8 name, u8 element type (0 = f32, 1 = f64),
//!                 u8 rank, u64 per dimension, row-major data
//! [u8; 32]        SHA-256 of the payload
//! ```
//!
//! Floating-point header values use Rust's shortest round-trip formatting,
//! so every field reloads exactly.

use std::path::Path;

use candle_core::{DType, Tensor};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{EpvtError, Result};
use crate::vit::{EpvtModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"EPVTCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

/// A trained model with the settings that produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: EpvtModel,
    pub train: TrainConfig,
    /// Zero-based epoch the parameters were taken after.
    pub epoch: usize,
    pub best_val_auc: f64,
}

fn dtype_code(dtype: DType) -> Result<u8> {
    match dtype {
        DType::F32 => Ok(0),
        DType::F64 => Ok(1),
        other => Err(EpvtError::CheckpointFormat(format!("cannot store element type {other:?}"))),
    }
}

fn dtype_name(code: u8) -> &'static str {
    match code {
        0 => "f32",
        1 => "f64",
        _ => "unknown",
    }
}

impl Checkpoint {
    fn header(&self) -> String {
        let mut lines = vec![
            format!("dtype = {}", dtype_name(dtype_code(self.model.dtype()).unwrap_or(u8::MAX))),
            format!("epoch = {}", self.epoch),
            format!("best_val_auc = {}", self.best_val_auc),
        ];
        for (k, v) in self.model.config().entries() {
            lines.push(format!("model.{k} = {v}"));
        }
        for (k, v) in self.train.entries() {
            lines.push(format!("train.{k} = {v}"));
        }
        lines.join("\n") + "\n"
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dtype = dtype_code(self.model.dtype())?;
        let mut payload = Vec::new();
        let header = self.header();
        payload.extend_from_slice(&(header.len() as u32).to_le_bytes());
        payload.extend_from_slice(header.as_bytes());
        let vars = self.model.named_vars();
        payload.extend_from_slice(&(vars.len() as u32).to_le_bytes());
        for nv in &vars {
            payload.extend_from_slice(&(nv.name.len() as u16).to_le_bytes());
            payload.extend_from_slice(nv.name.as_bytes());
            payload.push(dtype);
            let t = nv.var.as_tensor();
            payload.push(t.rank() as u8);
            for &d in t.dims() {
                payload.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let flat = t.flatten_all()?;
            match self.model.dtype() {
                DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes())),
                _ => flat.to_vec1::<f64>()?.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let mut out = Vec::with_capacity(PREAMBLE + payload.len() + DIGEST);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE {
            return Err(EpvtError::CheckpointTruncated(format!(
                "{} bytes is shorter than the {PREAMBLE}-byte preamble",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(EpvtError::CheckpointFormat("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(EpvtError::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let available = (bytes.len() - PREAMBLE) as u64;
        if declared.saturating_add(DIGEST as u64) > available {
            return Err(EpvtError::CheckpointTruncated(format!(
                "payload of {declared} bytes plus digest declared, {available} present"
            )));
        }
        if declared + DIGEST as u64 != available {
            return Err(EpvtError::CheckpointFormat(format!(
                "{} trailing bytes after the digest",
                available - declared - DIGEST as u64
            )));
        }
        let payload = &bytes[PREAMBLE..PREAMBLE + declared as usize];
        let digest = &bytes[PREAMBLE + declared as usize..];
        if Sha256::digest(payload).as_slice() != digest {
            return Err(EpvtError::CheckpointFormat("checksum mismatch".into()));
        }
        parse_payload(payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| EpvtError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EpvtError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(EpvtError::CheckpointFormat(format!(
                "record at payload offset {} runs past the end",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| EpvtError::CheckpointFormat("text is not UTF-8".into()))
    }
}

fn parse_payload(payload: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: payload, pos: 0 };
    let header_len = r.u32()? as usize;
    let header = r.str(header_len)?;

    let mut model_cfg = ModelConfig::default();
    let mut train_cfg = TrainConfig::default();
    let (mut dtype, mut epoch, mut best) = (None, None, None);
    let format_err = |m: String| EpvtError::CheckpointFormat(m);
    for line in header.lines() {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| format_err(format!("malformed header line `{line}`")))?;
        let known = match k {
            "dtype" => {
                dtype = Some(match v {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(format_err(format!("unknown dtype `{v}`"))),
                });
                true
            }
            "epoch" => {
                epoch = Some(v.parse::<usize>().map_err(|_| format_err(format!("bad epoch `{v}`")))?);
                true
            }
            "best_val_auc" => {
                best = Some(v.parse::<f64>().map_err(|_| format_err(format!("bad best_val_auc `{v}`")))?);
                true
            }
            _ => match (k.strip_prefix("model."), k.strip_prefix("train.")) {
                (Some(mk), _) => model_cfg.set(mk, v).map_err(|e| format_err(e.to_string()))?,
                (_, Some(tk)) => train_cfg.set(tk, v).map_err(|e| format_err(e.to_string()))?,
                _ => false,
            },
        };
        if !known {
            return Err(format_err(format!("unknown header key `{k}`")));
        }
    }
    let (Some(dtype), Some(epoch), Some(best_val_auc)) = (dtype, epoch, best) else {
        return Err(format_err("header lacks dtype, epoch or best_val_auc".into()));
    };
    model_cfg.validate().map_err(|e| format_err(e.to_string()))?;
    let model = EpvtModel::new(&model_cfg, dtype, 0)?;
    let expected = model.named_vars();

    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(format_err(format!("{count} arrays stored, model has {}", expected.len())));
    }
    for nv in &expected {
        let name_len = r.u16()? as usize;
        let name = r.str(name_len)?;
        if name != nv.name {
            return Err(format_err(format!("found array `{name}` where `{}` was expected", nv.name)));
        }
        let code = r.u8()?;
        let want = dtype_code(dtype)?;
        if code != want {
            return Err(EpvtError::CheckpointType {
                name: name.to_string(),
                found: dtype_name(code).to_string(),
                expected: dtype_name(want).to_string(),
            });
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let expected_dims = nv.var.dims().to_vec();
        if dims != expected_dims {
            return Err(EpvtError::CheckpointShape {
                name: name.to_string(),
                found: dims,
                expected: expected_dims,
            });
        }
        let n: usize = dims.iter().product();
        let t = match dtype {
            DType::F32 => {
                let raw = r.take(n * 4)?;
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, dims, model.device())?
            }
            _ => {
                let raw = r.take(n * 8)?;
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, dims, model.device())?
            }
        };
        nv.var.set(&t)?;
    }
    if r.pos != payload.len() {
        return Err(format_err(format!("{} unread bytes after the last array", payload.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        train: train_cfg,
        epoch,
        best_val_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        Checkpoint {
            model: EpvtModel::new(&ModelConfig::tiny(), DType::F32, 11).unwrap(),
            train: TrainConfig::default(),
            epoch: 3,
            best_val_auc: 0.8125,
        }
    }

    #[test]
    fn preamble_errors_are_distinct() {
        let bytes = ckpt().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(EpvtError::CheckpointTruncated(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(EpvtError::CheckpointTruncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(EpvtError::CheckpointFormat(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(EpvtError::CheckpointVersion { found: 9, .. })));
        let mut bad = bytes;
        bad[PREAMBLE + 10] ^= 0x20;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(EpvtError::CheckpointFormat(_))));
    }

    #[test]
    fn header_fields_round_trip() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.epoch, 3);
        assert_eq!(back.best_val_auc, 0.8125);
        assert_eq!(back.train, c.train);
        assert_eq!(back.model.config(), c.model.config());
        assert_eq!(back.model.dtype(), DType::F32);
    }
}
