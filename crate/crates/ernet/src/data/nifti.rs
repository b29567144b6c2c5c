//! Minimal uncompressed NIfTI-1 subset: single-file "n+1" images holding
//! uint8, int16, or float32 data, either byte order, no extensions. Volumes
//! write back as little-endian float32.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, FormatError, Result};

use super::Volume;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

struct Fields {
    dims: [usize; 3],
    datatype: i16,
    spacing: [f64; 3],
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
}

fn parse_header<B: ByteOrder>(path: &Path, h: &[u8]) -> Result<Fields> {
    let ndim = B::read_i16(&h[40..42]);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(
            path,
            FormatError::Invalid(format!("dim[0] = {ndim} outside 1..7")),
        ));
    }
    let mut dim = [1usize; 7];
    for (i, slot) in dim.iter_mut().enumerate() {
        if (i as i16) < ndim {
            let v = B::read_i16(&h[42 + 2 * i..44 + 2 * i]);
            if v < 1 {
                return Err(Error::format(
                    path,
                    FormatError::Invalid(format!("dim[{}] = {v} must be positive", i + 1)),
                ));
            }
            *slot = v as usize;
        }
    }
    if dim[3..].iter().product::<usize>() != 1 {
        return Err(Error::format(
            path,
            FormatError::Invalid("only 3D volumes are supported".into()),
        ));
    }
    let datatype = B::read_i16(&h[70..72]);
    let spacing = [
        B::read_f32(&h[80..84]) as f64,
        B::read_f32(&h[84..88]) as f64,
        B::read_f32(&h[88..92]) as f64,
    ];
    let vox_offset = B::read_f32(&h[108..112]) as usize;
    Ok(Fields {
        dims: [dim[0], dim[1], dim[2]],
        datatype,
        spacing,
        vox_offset: vox_offset.max(HEADER_SIZE),
        scl_slope: B::read_f32(&h[112..116]),
        scl_inter: B::read_f32(&h[116..120]),
    })
}

fn decode_values<B: ByteOrder>(
    path: &Path,
    bytes: &[u8],
    fields: &Fields,
) -> Result<Vec<f64>> {
    let voxels: usize = fields.dims.iter().product();
    let elem = match fields.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::format(path, FormatError::UnsupportedDatatype(other))),
    };
    let needed = fields.vox_offset + voxels * elem;
    if bytes.len() < needed {
        return Err(Error::format(
            path,
            FormatError::Truncated {
                needed,
                found: bytes.len(),
            },
        ));
    }
    let data = &bytes[fields.vox_offset..needed];
    let mut values: Vec<f64> = match fields.datatype {
        DT_UINT8 => data.iter().map(|&b| b as f64).collect(),
        DT_INT16 => data
            .chunks_exact(2)
            .map(|c| B::read_i16(c) as f64)
            .collect(),
        _ => data
            .chunks_exact(4)
            .map(|c| B::read_f32(c) as f64)
            .collect(),
    };
    // NIfTI stores image order with the first axis fastest; flip to the
    // engine's last-axis-contiguous layout.
    let [w, h, d] = fields.dims;
    let mut flipped = vec![0.0; values.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                flipped[(x * h + y) * d + z] = values[(z * h + y) * w + x];
            }
        }
    }
    values = flipped;
    if fields.scl_slope != 0.0 && (fields.scl_slope != 1.0 || fields.scl_inter != 0.0) {
        for v in &mut values {
            *v = *v * fields.scl_slope as f64 + fields.scl_inter as f64;
        }
    }
    Ok(values)
}

pub(crate) fn decode_nifti(path: &Path, bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            path,
            FormatError::Truncated {
                needed: HEADER_SIZE,
                found: bytes.len(),
            },
        ));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::format(path, FormatError::BadMagic { expected: "n+1" }));
    }
    if magic == b"ni1\0" {
        return Err(Error::format(
            path,
            FormatError::Invalid("two-file (.hdr/.img) images are not supported".into()),
        ));
    }
    let sizeof_le = LittleEndian::read_i32(&bytes[0..4]);
    let sizeof_be = BigEndian::read_i32(&bytes[0..4]);
    let (fields, values) = if sizeof_le == HEADER_SIZE as i32 {
        let fields = parse_header::<LittleEndian>(path, bytes)?;
        let values = decode_values::<LittleEndian>(path, bytes, &fields)?;
        (fields, values)
    } else if sizeof_be == HEADER_SIZE as i32 {
        let fields = parse_header::<BigEndian>(path, bytes)?;
        let values = decode_values::<BigEndian>(path, bytes, &fields)?;
        (fields, values)
    } else {
        return Err(Error::format(
            path,
            FormatError::Invalid(format!("sizeof_hdr = {sizeof_le} in either byte order")),
        ));
    };
    let mut volume = Volume::new(fields.dims, values)?;
    volume.spacing = fields.spacing;
    Ok(volume)
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti(path, &bytes)
}

/// Write a volume as single-file little-endian float32 NIfTI-1.
pub fn write_nifti(path: &Path, volume: &Volume) -> Result<()> {
    let [w, h, d] = volume.dims;
    let mut header = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut header[0..4], HEADER_SIZE as i32);
    LittleEndian::write_i16(&mut header[40..42], 3);
    LittleEndian::write_i16(&mut header[42..44], w as i16);
    LittleEndian::write_i16(&mut header[44..46], h as i16);
    LittleEndian::write_i16(&mut header[46..48], d as i16);
    for i in 4..8 {
        LittleEndian::write_i16(&mut header[40 + 2 * i..42 + 2 * i], 1);
    }
    LittleEndian::write_i16(&mut header[70..72], DT_FLOAT32);
    LittleEndian::write_i16(&mut header[72..74], 32); // bitpix
    LittleEndian::write_f32(&mut header[76..80], 1.0); // pixdim[0]
    LittleEndian::write_f32(&mut header[80..84], volume.spacing[0] as f32);
    LittleEndian::write_f32(&mut header[84..88], volume.spacing[1] as f32);
    LittleEndian::write_f32(&mut header[88..92], volume.spacing[2] as f32);
    LittleEndian::write_f32(&mut header[108..112], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut header[112..116], 1.0); // scl_slope
    header[344..348].copy_from_slice(b"n+1\0");

    let mut buf = header;
    buf.reserve(volume.numel() * 4);
    // First axis fastest on disk.
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let v = volume.values[(x * h + y) * d + z] as f32;
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
