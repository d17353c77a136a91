//! Named-tensor container used by checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "MTNS"
//! version  u32
//! count    u32      number of entries
//! entry*   u32 name_len, name (UTF-8), u32 ndim, ndim x u32 extents,
//!          prod(extents) x f32 values
//! ```

use std::io::{Read, Write};

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MTNS";

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerEntry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn write_container<W: Write>(out: &mut W, entries: &[ContainerEntry]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for entry in entries {
        let name = entry.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        let shape = entry.tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(entry.tensor.numel() * 4);
        for v in entry.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_container<R: Read>(input: &mut R) -> Result<Vec<ContainerEntry>> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("missing container header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad container magic".into()));
    }
    let version = read_u32(input)?;
    if version != CONTAINER_VERSION {
        return Err(Error::Checkpoint(format!("unsupported container version {version}")));
    }
    let count = read_u32(input)? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated entry name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let ndim = read_u32(input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(input)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        input
            .read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated values for `{name}`: {e}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("entry `{name}`: {e}")))?;
        entries.push(ContainerEntry { name, tensor });
    }
    Ok(entries)
}

impl ContainerEntry {
    pub fn from_tensor<T: Real>(name: impl Into<String>, tensor: &Tensor<T>) -> Self {
        ContainerEntry {
            name: name.into(),
            tensor: tensor.cast(),
        }
    }
}
