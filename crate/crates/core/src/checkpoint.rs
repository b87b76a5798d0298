//! Checkpoint persistence. Little-endian layout:
//! magic "SAILCKPT" (8 bytes), u32 version, u64 config length + UTF-8 JSON
//! config, then per parameter [u32 name length, name, u32 rank, u64 dims...,
//! raw f64 payload], terminated by a u32 record-count footer.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SailError};
use crate::model::{SailConfig, SailModel};
use crate::store::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"SAILCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub config: SailConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<SailModel> {
        SailModel::from_parts(self.config, self.params)
    }
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, cfg: &SailConfig) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let cfg_json = serde_json::to_vec(cfg)?;
    out.write_all(&(cfg_json.len() as u64).to_le_bytes())?;
    out.write_all(&cfg_json)?;
    for (name, tensor) in store.iter() {
        let name_bytes = name.as_bytes();
        out.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        out.write_all(name_bytes)?;
        out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &d in tensor.dims() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(SailError::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file holds {}",
                self.pos,
                self.buf.len()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(SailError::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(SailError::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let cfg_len = cur.u64()? as usize;
    let cfg_bytes = cur.take(cfg_len)?;
    let config: SailConfig = serde_json::from_slice(cfg_bytes)
        .map_err(|e| SailError::Checkpoint(format!("config blob: {e}")))?;

    let mut params = ParamStore::new();
    let mut records = 0u32;
    while cur.remaining() > 4 {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| SailError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64()? as usize);
        }
        let count: usize = dims.iter().product();
        let payload = cur.take(count * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(dims, data).map_err(|e| SailError::Checkpoint(e.to_string()))?;
        params.register(name, tensor).map_err(|e| SailError::Checkpoint(e.to_string()))?;
        records += 1;
    }
    if cur.remaining() != 4 {
        return Err(SailError::Checkpoint("missing record-count footer".into()));
    }
    let footer = cur.u32()?;
    if footer != records {
        return Err(SailError::Checkpoint(format!(
            "record count footer {footer} does not match {records} records"
        )));
    }
    Ok(Checkpoint { version, config, params })
}
