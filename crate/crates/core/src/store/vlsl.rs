//! Binary embedding container.
//!
//! Layout (little-endian):
//!
//! ```text
//!   [u8; 4]  magic "VLSL"
//!   u32      version (= 1)
//!   u64      count
//!   u32      dim
//!   f32 * count * dim   row-major payload
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VLSL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4;

/// Rows exactly as stored on disk, before any normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl RawMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}",
            &bytes[0..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::MalformedHeader("dim must be positive".into()));
    }

    let payload = (bytes.len() - HEADER_LEN) as u64;
    let expected = count
        .checked_mul(u64::from(dim))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("count * dim overflows".into()))?;
    if payload != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload,
        });
    }

    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawMatrix {
        count: count as usize,
        dim: dim as usize,
        data,
    })
}

pub fn read<R: Read>(mut reader: R) -> Result<RawMatrix> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn encode(dim: usize, data: &[f32]) -> Result<Vec<u8>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be positive".into()));
    }
    if !data.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(format!(
            "payload of {} floats is not a multiple of dim {dim}",
            data.len()
        )));
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidArgument("dim exceeds u32".into()))?;
    let count = (data.len() / dim) as u64;

    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write<W: Write>(mut writer: W, dim: usize, data: &[f32]) -> Result<()> {
    writer.write_all(&encode(dim, data)?)?;
    Ok(())
}
