//! HTSC checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HTSC"  u32 version
//! u32 config_len, config echo (UTF-8)
//! u32 param_count
//! per param: u32 name_len, name, u32 rank, rank × u32 extents, f32 data
//! u64 FNV-1a checksum of every preceding byte
//! ```

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use htsat_core::model::ParamStore;
use htsat_core::{HtsModel, Tensor};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

pub const MAGIC: &[u8; 4] = b"HTSC";
pub const VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(config: &RunConfig, params: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let echo = config.echo();
    put_u32(&mut out, echo.len());
    out.extend_from_slice(echo.as_bytes());
    put_u32(&mut out, params.len());
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &e in t.shape() {
            put_u32(&mut out, e);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Decodes and validates a checkpoint: checksum, version, config and the
/// parameter layout implied by that config.
pub fn decode(bytes: &[u8]) -> Result<(RunConfig, HtsModel<f32>)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(CliError::Checkpoint("not an HTSC file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if checksum(body) != stored {
        return Err(CliError::Checkpoint("checksum mismatch".into()));
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u32()? as u32;
    if version != VERSION {
        return Err(CliError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = c.u32()?;
    let echo = std::str::from_utf8(c.take(n)?).map_err(|_| CliError::Checkpoint("config echo is not UTF-8".into()))?;
    let config = RunConfig::parse(echo)?;
    let count = c.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = c.u32()?;
        let name = std::str::from_utf8(c.take(n)?).map_err(|_| CliError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len.checked_mul(4).ok_or_else(|| CliError::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let t = Tensor::new(&shape, data).map_err(|e| CliError::Checkpoint(format!("{name}: {e}")))?;
        params.push(name, t);
    }
    if c.pos != body.len() {
        return Err(CliError::Checkpoint("trailing bytes after parameters".into()));
    }
    let model = HtsModel::<f32>::zeroed(config.model.clone())?;
    model
        .params
        .check_compatible(&params)
        .map_err(|e| CliError::Checkpoint(format!("parameters do not match the stored config: {e}")))?;
    let model = model.with_params(params)?;
    Ok((config, model))
}

pub fn save(path: &Path, config: &RunConfig, params: &ParamStore<f32>) -> Result<()> {
    std::fs::write(path, encode(config, params)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<(RunConfig, HtsModel<f32>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Checkpoint(msg) => CliError::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
