//! Volume containers, file formats, synthetic phantoms, and augmentation.

mod augment;
mod dataset;
mod nifti;
mod phantom;
mod rvol;

pub use augment::{augment_sample, random_affine, AugmentationRanges};
pub use dataset::{load_dataset, mix_seed, write_phantom_dataset, Dataset, Sample, SampleEntry};
pub use nifti::{read_nifti, write_nifti};
pub use phantom::{make_phantom, PhantomSample};
pub use rvol::{read_rvol, write_rvol, RvolPayload};

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CoordinateFrame;

/// Dense scalar grid with voxel spacing metadata. The last axis is
/// contiguous in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
    /// Voxel spacing in millimeters; informational.
    pub spacing: [f64; 3],
    /// Pre-normalization intensity extrema, recorded by
    /// [`normalize_minmax`].
    pub intensity_range: Option<(f64, f64)>,
}

impl Volume {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "volume: dims {:?} imply {} voxels, got {}",
                dims,
                dims.iter().product::<usize>(),
                values.len()
            )));
        }
        Ok(Volume {
            dims,
            values,
            spacing: [1.0, 1.0, 1.0],
            intensity_range: None,
        })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Volume {
            dims,
            values: vec![0.0; dims.iter().product()],
            spacing: [1.0, 1.0, 1.0],
            intensity_range: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn frame(&self) -> CoordinateFrame {
        CoordinateFrame { extents: self.dims }
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[(x * self.dims[1] + y) * self.dims[2] + z]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Min-max intensity normalization: `(v - min) / (max - min)`, with constant
/// volumes mapping to all-zeros. The source extrema are recorded on the
/// result.
pub fn normalize_minmax(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let span = hi - lo;
    let values = if span == 0.0 {
        vec![0.0; v.numel()]
    } else {
        v.values.iter().map(|x| (x - lo) / span).collect()
    };
    Volume {
        dims: v.dims,
        values,
        spacing: v.spacing,
        intensity_range: Some((lo, hi)),
    }
}

/// Read a volume from either the native format or the NIfTI-1 subset,
/// decided by the file's magic bytes.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 4 && &bytes[..4] == b"RVOL" {
        let (dims, spacing, payload) = rvol::decode_rvol(path, &bytes)?;
        let values = match payload {
            RvolPayload::F64(v) => v,
            RvolPayload::U32(v) => v.into_iter().map(f64::from).collect(),
        };
        let mut vol = Volume::new(dims, values)?;
        vol.spacing = spacing;
        Ok(vol)
    } else {
        nifti::decode_nifti(path, &bytes)
    }
}

/// Write a volume in the format implied by the extension (`.rvol` native,
/// anything else NIfTI-1 float32).
pub fn write_volume(path: &Path, volume: &Volume) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rvol") => write_rvol(
            path,
            volume.dims,
            volume.spacing,
            RvolPayload::F64(volume.values.clone()),
        ),
        _ => write_nifti(path, volume),
    }
}
