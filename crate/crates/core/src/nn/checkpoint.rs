//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "CDNN"            4 bytes magic
//! u32               version (1)
//! u32 + bytes       UTF-8 model config text
//! u32               tensor count
//! per tensor:
//!   u16 + bytes     UTF-8 name
//!   u8              rank
//!   u32 × rank      dims
//!   f32 × product   data
//! ```
//!
//! Batch-norm running statistics are stored as `<unit>.running_mean` and
//! `<unit>.running_var` tensors next to the trainable ones.

use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::model::CdnnModel;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDNN";
pub const VERSION: u32 = 1;

fn named_tensors(model: &CdnnModel) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = model.params().to_vec();
    for (name, s) in model.unit_names().iter().zip(model.running_stats()) {
        let c = s.channels();
        out.push((format!("{name}.running_mean"), Tensor::new(&[c], s.mean.clone()).expect("channel count")));
        out.push((format!("{name}.running_var"), Tensor::new(&[c], s.var.clone()).expect("channel count")));
    }
    out
}

pub fn to_bytes(model: &CdnnModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config().to_text();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    let tensors = named_tensors(model);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint {
                field,
                msg: format!(
                    "truncated: need {n} bytes at offset {}, only {} remain",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize, field: &'static str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, field)?).map_err(|e| Error::Checkpoint { field, msg: e.to_string() })
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<CdnnModel> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint { field: "magic", msg: format!("expected \"CDNN\", found {magic:?}") });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint { field: "version", msg: format!("unsupported version {version}") });
    }
    let cfg_len = r.u32("config_length")? as usize;
    let cfg_text = r.utf8(cfg_len, "config")?;
    let config = ModelConfig::from_text(cfg_text)
        .map_err(|e| Error::Checkpoint { field: "config", msg: e.to_string() })?;
    let mut model = CdnnModel::build(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let count = r.u32("tensor_count")? as usize;
    let expected = named_tensors(&model);
    if count != expected.len() {
        return Err(Error::Checkpoint {
            field: "tensor_count",
            msg: format!("config implies {} tensors, header says {count}", expected.len()),
        });
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = r.u16("tensor.name_length")? as usize;
        let name = r.utf8(name_len, "tensor.name")?.to_string();
        let rank = r.u8("tensor.rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor.dims")? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4, "tensor.data")?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let Some((_, reference)) = expected.iter().find(|(n, _)| *n == name) else {
            return Err(Error::Checkpoint { field: "tensor.name", msg: format!("unexpected tensor `{name}`") });
        };
        if reference.shape() != dims.as_slice() {
            return Err(Error::Checkpoint {
                field: "tensor.dims",
                msg: format!("`{name}` has shape {dims:?}, config implies {:?}", reference.shape()),
            });
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint { field: "tensor.name", msg: format!("duplicate tensor `{name}`") });
        }
        if let Some(unit) = name.strip_suffix(".running_mean").or_else(|| name.strip_suffix(".running_var")) {
            let idx = model.unit_names().iter().position(|u| u == unit).expect("name validated above");
            let stats = &mut model.running_stats_mut()[idx];
            if name.ends_with(".running_mean") {
                stats.mean = data;
            } else {
                stats.var = data;
            }
        } else {
            let t = model.param_mut(&name).expect("name validated above");
            *t = Tensor::new(&dims, data)?;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint {
            field: "tensor.data",
            msg: format!("{} trailing bytes after the last tensor", buf.len() - r.pos),
        });
    }
    Ok(model)
}

pub fn save_checkpoint(model: &CdnnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CdnnModel> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CdnnModel {
        CdnnModel::build(&ModelConfig::reduced("ck", 3, [4, 8], 3), &mut ChaCha8Rng::seed_from_u64(7)).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let m = model();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        let x = Tensor::full(&[1, 3, 4, 4], 0.25);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut b = to_bytes(&model());
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(Error::Checkpoint { field: "magic", .. })));
    }

    #[test]
    fn inflated_tensor_count_is_truncation() {
        let m = model();
        let mut b = to_bytes(&m);
        let cfg_len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let at = 12 + cfg_len;
        let n = u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
        b[at..at + 4].copy_from_slice(&(n + 1).to_le_bytes());
        let err = from_bytes(&b).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { field: "tensor_count", .. }), "{err}");
        let b = to_bytes(&m);
        let err = from_bytes(&b[..b.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut b = to_bytes(&model());
        b[4] = 9;
        assert!(matches!(from_bytes(&b), Err(Error::Checkpoint { field: "version", .. })));
    }
}
