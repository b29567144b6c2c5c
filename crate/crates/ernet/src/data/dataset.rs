//! Dataset layout and loading.
//!
//! Two layouts are accepted:
//! - atlas directory: one `target.rvol` (or `.nii`) shared by every
//!   `source_*` volume, with optional `mask_*`, `labels_*`,
//!   `transform_*.txt`, and `target_labels.rvol` siblings;
//! - manifest: a JSON file listing `{source, target?, mask?, labels?,
//!   transform?}` entries (either a bare list, or an object with a shared
//!   `target` plus a `samples` list).
//!
//! Sources and targets are min-max normalized at load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{read_transform_as_normalized, AffineTransform, TransformConvention};

use super::augment::AugmentationRanges;
use super::phantom::make_phantom;
use super::rvol::{read_rvol, write_rvol, RvolPayload};
use super::{normalize_minmax, read_volume, Volume};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestObject {
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    target_labels: Option<String>,
    samples: Vec<SampleEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Object(ManifestObject),
    List(Vec<SampleEntry>),
}

/// One fully loaded pair with whatever ground truth the dataset carries.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub source: Volume,
    pub target: Volume,
    pub truth_mask: Option<Vec<f64>>,
    pub truth_labels: Option<Vec<u32>>,
    pub target_labels: Option<Vec<u32>>,
    pub truth_transform: Option<AffineTransform>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let (_, _, payload) = read_rvol(path)?;
    Ok(match payload {
        RvolPayload::U32(v) => v,
        RvolPayload::F64(v) => v.into_iter().map(|x| x as u32).collect(),
    })
}

fn read_mask(path: &Path) -> Result<Vec<f64>> {
    let volume = read_volume(path)?;
    Ok(volume.values)
}

fn load_entry(base: &Path, entry: &SampleEntry, atlas: Option<&Volume>) -> Result<Sample> {
    let resolve = |rel: &str| base.join(rel);
    let source = normalize_minmax(&read_volume(&resolve(&entry.source))?);
    let target = match (&entry.target, atlas) {
        (Some(rel), _) => normalize_minmax(&read_volume(&resolve(rel))?),
        (None, Some(shared)) => shared.clone(),
        (None, None) => {
            return Err(Error::invalid(format!(
                "sample '{}' has no target and the dataset declares no shared one",
                entry.source
            )))
        }
    };
    let truth_mask = entry.mask.as_deref().map(|m| read_mask(&resolve(m))).transpose()?;
    let truth_labels = entry
        .labels
        .as_deref()
        .map(|l| read_labels(&resolve(l)))
        .transpose()?;
    let target_labels = entry
        .target_labels
        .as_deref()
        .map(|l| read_labels(&resolve(l)))
        .transpose()?;
    let truth_transform = entry
        .transform
        .as_deref()
        .map(|t| read_transform_as_normalized(&resolve(t), &source.frame()))
        .transpose()?;
    Ok(Sample {
        name: entry.source.clone(),
        source,
        target,
        truth_mask,
        truth_labels,
        target_labels,
        truth_transform,
    })
}

fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text)?;
    let (shared_target, shared_target_labels, entries) = match manifest {
        ManifestFile::Object(obj) => (obj.target, obj.target_labels, obj.samples),
        ManifestFile::List(list) => (None, None, list),
    };
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let atlas = shared_target
        .as_deref()
        .map(|rel| read_volume(&base.join(rel)).map(|v| normalize_minmax(&v)))
        .transpose()?;
    let atlas_labels = shared_target_labels
        .as_deref()
        .map(|rel| read_labels(&base.join(rel)))
        .transpose()?;
    let mut samples = Vec::with_capacity(entries.len());
    for entry in &entries {
        let mut sample = load_entry(&base, entry, atlas.as_ref())?;
        if sample.target_labels.is_none() {
            sample.target_labels = atlas_labels.clone();
        }
        samples.push(sample);
    }
    Ok(Dataset { samples })
}

fn load_atlas_dir(dir: &Path) -> Result<Dataset> {
    let mut sources: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("source_"))
        })
        .collect();
    sources.sort();
    if sources.is_empty() {
        return Ok(Dataset::default());
    }
    let target_path = ["target.rvol", "target.nii"]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| Error::invalid(format!("{}: no target volume found", dir.display())))?;
    let atlas = normalize_minmax(&read_volume(&target_path)?);
    let atlas_labels_path = dir.join("target_labels.rvol");
    let atlas_labels = if atlas_labels_path.exists() {
        Some(read_labels(&atlas_labels_path)?)
    } else {
        None
    };
    let mut samples = Vec::with_capacity(sources.len());
    for path in sources {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let suffix = name.trim_start_matches("source_").to_string();
        let sibling = |prefix: &str, ext: &str| -> Option<String> {
            let candidate = dir.join(format!("{prefix}_{suffix}.{ext}"));
            candidate
                .exists()
                .then(|| candidate.file_name().unwrap().to_string_lossy().into_owned())
        };
        let entry = SampleEntry {
            source: path.file_name().unwrap().to_string_lossy().into_owned(),
            target: None,
            mask: sibling("mask", "rvol"),
            labels: sibling("labels", "rvol"),
            target_labels: None,
            transform: sibling("transform", "txt"),
        };
        let mut sample = load_entry(dir, &entry, Some(&atlas))?;
        sample.target_labels = atlas_labels.clone();
        sample.name = name;
        samples.push(sample);
    }
    Ok(Dataset { samples })
}

/// Load a dataset from a manifest file, a directory containing
/// `manifest.json`, or an atlas-layout directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if path.is_file() {
        return load_manifest(path);
    }
    let manifest = path.join("manifest.json");
    if manifest.exists() {
        load_manifest(&manifest)
    } else {
        load_atlas_dir(path)
    }
}

/// Generate `count` phantoms into an atlas-layout directory (shared target,
/// per-sample masks, labels, and truth transforms) plus a manifest.
pub fn write_phantom_dataset(
    dir: &Path,
    count: usize,
    extents: [usize; 3],
    ranges: &AugmentationRanges,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let sample = make_phantom(mix_seed(seed, i as u64), extents, ranges)?;
        if i == 0 {
            write_rvol(
                &dir.join("target.rvol"),
                extents,
                sample.target.spacing,
                RvolPayload::F64(sample.target.values.clone()),
            )?;
            write_rvol(
                &dir.join("target_labels.rvol"),
                extents,
                sample.target.spacing,
                RvolPayload::U32(sample.target_labels.clone()),
            )?;
        }
        let source_name = format!("source_{i:03}.rvol");
        let mask_name = format!("mask_{i:03}.rvol");
        let labels_name = format!("labels_{i:03}.rvol");
        let transform_name = format!("transform_{i:03}.txt");
        write_rvol(
            &dir.join(&source_name),
            extents,
            sample.source.spacing,
            RvolPayload::F64(sample.source.values.clone()),
        )?;
        write_rvol(
            &dir.join(&mask_name),
            extents,
            sample.source.spacing,
            RvolPayload::F64(sample.truth_mask.clone()),
        )?;
        write_rvol(
            &dir.join(&labels_name),
            extents,
            sample.source.spacing,
            RvolPayload::U32(sample.truth_labels.clone()),
        )?;
        crate::geometry::write_transform_file(
            &dir.join(&transform_name),
            &sample.truth_transform.params,
            TransformConvention::NormalizedCentered,
        )?;
        entries.push(SampleEntry {
            source: source_name,
            target: None,
            mask: Some(mask_name),
            labels: Some(labels_name),
            target_labels: None,
            transform: Some(transform_name),
        });
    }
    let manifest = ManifestObject {
        target: Some("target.rvol".into()),
        target_labels: Some("target_labels.rvol".into()),
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json).map_err(|e| Error::io(dir, e))
}

/// Cheap integer mix for deriving per-sample and per-iteration seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
