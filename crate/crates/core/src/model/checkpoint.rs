//! Binary checkpoint: magic `SQMC`, format version, named configuration
//! fields, then every parameter as name, rank, dims and an `f32` payload.
//! All integers are little-endian `u32`.

use std::path::Path;

use super::init::param_specs;
use super::{ModelConfig, ModelError};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"SQMC";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Checkpoint(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), ModelError> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn checkpoint_bytes(cfg: &ModelConfig, store: &ParamStore) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::with_capacity(store.numel() * 4 + 1024);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize)?;
    let fields = cfg.fields();
    put_u32(&mut out, fields.len())?;
    for (name, v) in fields {
        put_str(&mut out, name)?;
        put_u32(&mut out, v)?;
    }
    put_u32(&mut out, store.len())?;
    for (name, p) in store.iter() {
        put_str(&mut out, name)?;
        put_u32(&mut out, p.value.rank())?;
        for &d in p.value.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("name is not UTF-8".into()))
    }
}

/// Parses a checkpoint and checks that its parameters are exactly those the
/// stored configuration requires.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ParamStore), ModelError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut cfg = ModelConfig::default();
    let n_fields = r.u32()?;
    let mut seen = Vec::new();
    for _ in 0..n_fields {
        let name = r.string()?;
        let v = r.u32()?;
        if !cfg.set_field(&name, v) {
            return Err(ModelError::Checkpoint(format!("unknown config field {name:?}")));
        }
        seen.push(name);
    }
    for (name, _) in cfg.fields() {
        if !seen.iter().any(|s| s == name) {
            return Err(ModelError::Checkpoint(format!("missing config field {name:?}")));
        }
    }
    cfg.validate()?;

    let specs = param_specs(&cfg);
    let count = r.u32()?;
    if count != specs.len() {
        return Err(ModelError::Checkpoint(format!(
            "{count} parameters, configuration needs {}",
            specs.len()
        )));
    }
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let expected = specs.iter().find(|s| s.name == name);
        match expected {
            Some(s) if s.shape == shape => {}
            Some(s) => {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: shape {shape:?}, expected {:?}",
                    s.shape
                )))
            }
            None => return Err(ModelError::Checkpoint(format!("unexpected parameter {name:?}"))),
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((cfg, store))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, store: &ParamStore) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint_bytes(cfg, store)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore), ModelError> {
    parse_checkpoint(&std::fs::read(path)?)
}
