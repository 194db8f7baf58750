//! Binary checkpoint: magic, version, a length-prefixed JSON header with the
//! config and parameter shapes, then every parameter value as `f64` LE in
//! set order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncoderConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numkernel::{Param, ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LRTDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    nonlocal_active: bool,
    params: Vec<ParamHeader>,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        nonlocal_active: model.nonlocal_active(),
        params: model
            .params()
            .iter()
            .map(|p| ParamHeader {
                name: p.id().to_string(),
                shape: p.value().shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * model.params().num_scalars());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params().iter() {
        for v in p.value().data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let mut r = ByteReader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let mut take = |n: usize, what: &str| r.take(n, what);
    let (_, magic) = take(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse_byte(path, 0, "not a checkpoint file"));
    }
    let (at, v) = take(4, "version")?;
    let version = u32::from_le_bytes(v.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse_byte(
            path,
            at as u64,
            format!("unsupported version {version}"),
        ));
    }
    let (_, n) = take(4, "header length")?;
    let n = u32::from_le_bytes(n.try_into().expect("4 bytes")) as usize;
    let (at, json) = take(n, "header")?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::parse_byte(path, at as u64, format!("bad header: {e}")))?;
    let mut set = ParamSet::new();
    for ph in &header.params {
        let count: usize = ph.shape.iter().product();
        let (at, raw) = take(8 * count, &format!("values of {}", ph.name))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Tensor::new(ph.shape.clone(), data)
            .map_err(|e| Error::parse_byte(path, at as u64, format!("{}: {e}", ph.name)))?;
        set.push(Param::new(ph.name.clone(), value))?;
    }
    let (at, _) = take(0, "end")?;
    if at != bytes.len() {
        return Err(Error::parse_byte(path, at as u64, "trailing bytes after parameters"));
    }
    ModelParams::from_parts(header.config, set, header.nonlocal_active)
}

struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<(usize, &'a [u8])> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::parse_byte(
                self.path,
                self.pos as u64,
                format!("truncated {what}"),
            ));
        }
        let at = self.pos;
        self.pos += n;
        Ok((at, &self.bytes[at..at + n]))
    }
}
