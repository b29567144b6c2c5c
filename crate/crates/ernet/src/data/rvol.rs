//! Native volume format: "RVOL" magic, a length-prefixed JSON header with
//! extents, dtype, and spacing, then a little-endian payload. Bit-exact for
//! f64 data; u32 payloads carry label grids.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RvolPayload {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

#[derive(Serialize, Deserialize)]
struct RvolHeader {
    extents: [usize; 3],
    dtype: String,
    spacing: [f64; 3],
}

pub fn write_rvol(
    path: &Path,
    dims: [usize; 3],
    spacing: [f64; 3],
    payload: RvolPayload,
) -> Result<()> {
    let dtype = match &payload {
        RvolPayload::F64(_) => "f64",
        RvolPayload::U32(_) => "u32",
    };
    let header = serde_json::to_vec(&RvolHeader {
        extents: dims,
        dtype: dtype.to_string(),
        spacing,
    })?;
    let payload_len = match &payload {
        RvolPayload::F64(v) => v.len() * 8,
        RvolPayload::U32(v) => v.len() * 4,
    };
    let mut buf = Vec::with_capacity(12 + header.len() + payload_len);
    buf.extend_from_slice(b"RVOL");
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    match &payload {
        RvolPayload::F64(values) => {
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        RvolPayload::U32(values) => {
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_rvol(path: &Path) -> Result<([usize; 3], [f64; 3], RvolPayload)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rvol(path, &bytes)
}

pub(crate) fn decode_rvol(path: &Path, bytes: &[u8]) -> Result<([usize; 3], [f64; 3], RvolPayload)> {
    let need = |n: usize| -> Result<()> {
        if bytes.len() < n {
            Err(Error::format(
                path,
                FormatError::Truncated {
                    needed: n,
                    found: bytes.len(),
                },
            ))
        } else {
            Ok(())
        }
    };
    need(12)?;
    if &bytes[..4] != b"RVOL" {
        return Err(Error::format(path, FormatError::BadMagic { expected: "RVOL" }));
    }
    let header_len = LittleEndian::read_u64(&bytes[4..12]) as usize;
    need(12 + header_len)?;
    let header: RvolHeader = serde_json::from_slice(&bytes[12..12 + header_len])?;
    let voxels: usize = header.extents.iter().product();
    let data = &bytes[12 + header_len..];
    let payload = match header.dtype.as_str() {
        "f64" => {
            need(12 + header_len + voxels * 8)?;
            RvolPayload::F64(
                data[..voxels * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        "u32" => {
            need(12 + header_len + voxels * 4)?;
            RvolPayload::U32(
                data[..voxels * 4]
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        other => {
            return Err(Error::format(
                path,
                FormatError::Invalid(format!("unknown rvol dtype '{other}'")),
            ))
        }
    };
    Ok((header.extents, header.spacing, payload))
}
