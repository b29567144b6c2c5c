//! Parameter checkpoint file: magic "ERN1", a length-prefixed UTF-8 JSON
//! manifest (name, shape, dtype, byte offset), then raw little-endian values.
//! The f64 encoding round-trips bit-exactly; f32 is a lossy export option.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

const MAGIC: &[u8; 4] = b"ERN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointDtype {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Self {
        NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        NamedTensor {
            name: name.into(),
            shape: Vec::new(),
            values: vec![value],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: CheckpointDtype,
    /// Byte offset into the data section that follows the manifest.
    offset: u64,
}

pub fn write_checkpoint(path: &Path, tensors: &[NamedTensor], dtype: CheckpointDtype) -> Result<()> {
    let elem = match dtype {
        CheckpointDtype::F64 => 8,
        CheckpointDtype::F32 => 4,
    };
    let mut offset = 0u64;
    let entries: Vec<ManifestEntry> = tensors
        .iter()
        .map(|t| {
            let entry = ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype,
                offset,
            };
            offset += (t.values.len() * elem) as u64;
            entry
        })
        .collect();
    let manifest = serde_json::to_vec(&entries)?;

    let mut buf = Vec::with_capacity(12 + manifest.len() + offset as usize);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest);
    for tensor in tensors {
        match dtype {
            CheckpointDtype::F64 => {
                for v in &tensor.values {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            CheckpointDtype::F32 => {
                for v in &tensor.values {
                    buf.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
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
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, FormatError::BadMagic { expected: "ERN1" }));
    }
    let manifest_len = LittleEndian::read_u64(&bytes[4..12]) as usize;
    need(12 + manifest_len)?;
    let entries: Vec<ManifestEntry> = serde_json::from_slice(&bytes[12..12 + manifest_len])?;
    let data_start = 12 + manifest_len;
    let mut tensors = Vec::with_capacity(entries.len());
    for entry in entries {
        let numel: usize = entry.shape.iter().product();
        let elem = match entry.dtype {
            CheckpointDtype::F64 => 8,
            CheckpointDtype::F32 => 4,
        };
        let start = data_start + entry.offset as usize;
        need(start + numel * elem)?;
        let raw = &bytes[start..start + numel * elem];
        let values: Vec<f64> = match entry.dtype {
            CheckpointDtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            CheckpointDtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        tensors.push(NamedTensor {
            name: entry.name,
            shape: entry.shape,
            values,
        });
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_tensors() -> Vec<NamedTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        vec![
            NamedTensor::new(
                "net.conv0.weight",
                &[2, 1, 3, 3, 3],
                (0..54).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            ),
            NamedTensor::new("net.conv0.bias", &[2], vec![0.125, -3.5e-7]),
            NamedTensor::scalar("optim.step", 42.0),
        ]
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ern1");
        let tensors = sample_tensors();
        write_checkpoint(&path, &tensors, CheckpointDtype::F64).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(tensors.len(), back.len());
        for (a, b) in tensors.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn f32_export_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model32.ern1");
        let tensors = sample_tensors();
        write_checkpoint(&path, &tensors, CheckpointDtype::F32).unwrap();
        let back = read_checkpoint(&path).unwrap();
        for (a, b) in tensors.iter().zip(&back) {
            for (va, vb) in a.values.iter().zip(&b.values) {
                assert_eq!(*va as f32, *vb as f32);
            }
        }
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ern1");
        std::fs::write(&path, b"NOPE-not-a-checkpoint").unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ern1");
        write_checkpoint(&path, &sample_tensors(), CheckpointDtype::F64).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = read_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }
}
