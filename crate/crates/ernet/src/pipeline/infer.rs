//! Inference: run the pipeline in hard-threshold mode and write the
//! artifacts under an output directory.
//!
//! Files written: `extracted.rvol` (final extracted image), `mask.rvol`
//! (cumulative binary mask), `warped.rvol` (final output image),
//! `transform_normalized.txt` and `transform_voxel.txt` (final combined
//! transform in both conventions), and optionally the per-stage
//! `mask_stage{j}.rvol` / `warp_stage{k}.rvol` series.

use std::path::{Path, PathBuf};

use crate::data::{normalize_minmax, write_volume, Volume};
use crate::error::{Error, Result};
use crate::extraction::Mode;
use crate::geometry::{
    to_voxel_matrix, write_transform_file, AffineTransform, CoordinateFrame, TransformConvention,
};

use super::{forward, ErnetModel};

#[derive(Debug, Clone)]
pub struct InferOutputs {
    pub extracted: Volume,
    pub mask: Volume,
    pub warped: Volume,
    pub transform: AffineTransform,
    pub written: Vec<PathBuf>,
    /// Stage artifact count: extraction masks plus registration warps.
    pub stage_artifacts: usize,
}

/// Run inference on one pair and write the artifact set. Inputs are
/// min-max normalized before entering the pipeline.
pub fn infer(
    model: &ErnetModel,
    source: &Volume,
    target: &Volume,
    out_dir: &Path,
    emit_stages: bool,
) -> Result<InferOutputs> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let source = normalize_minmax(source);
    let target = normalize_minmax(target);
    let pass = forward(model, &source, &target, Mode::Infer)?;
    if pass.degenerate {
        eprintln!("warning: both stage counts are zero; the output is the source unchanged");
    }
    let dims = source.dims;
    let frame = CoordinateFrame::new(dims)?;

    let extracted_values = pass
        .extraction
        .as_ref()
        .map(|t| pass.tape.values(t.final_image()).to_vec())
        .unwrap_or_else(|| source.values.clone());
    let mut extracted = Volume::new(dims, extracted_values)?;
    extracted.spacing = source.spacing;
    let mut mask = Volume::new(dims, pass.cumulative_mask())?;
    mask.spacing = source.spacing;
    let mut warped = Volume::new(dims, pass.final_image())?;
    warped.spacing = source.spacing;
    let transform = AffineTransform::from_params(pass.final_transform);

    fn emit(
        out_dir: &Path,
        written: &mut Vec<PathBuf>,
        name: &str,
        volume: &Volume,
    ) -> Result<()> {
        let path = out_dir.join(name);
        write_volume(&path, volume)?;
        written.push(path);
        Ok(())
    }

    let mut written = Vec::new();
    emit(out_dir, &mut written, "extracted.rvol", &extracted)?;
    emit(out_dir, &mut written, "mask.rvol", &mask)?;
    emit(out_dir, &mut written, "warped.rvol", &warped)?;

    let normalized_path = out_dir.join("transform_normalized.txt");
    write_transform_file(
        &normalized_path,
        &transform.params,
        TransformConvention::NormalizedCentered,
    )?;
    written.push(normalized_path);
    let voxel = AffineTransform::from_matrix(&to_voxel_matrix(&transform, &frame));
    let voxel_path = out_dir.join("transform_voxel.txt");
    write_transform_file(&voxel_path, &voxel.params, TransformConvention::Voxel)?;
    written.push(voxel_path);

    let mut stage_artifacts = 0usize;
    if emit_stages {
        if let Some(trace) = &pass.extraction {
            for (j, &mask_id) in trace.mask_ids.iter().enumerate() {
                let mut stage = Volume::new(dims, pass.tape.values(mask_id).to_vec())?;
                stage.spacing = source.spacing;
                emit(out_dir, &mut written, &format!("mask_stage{}.rvol", j + 1), &stage)?;
                stage_artifacts += 1;
            }
        }
        if let Some(trace) = &pass.registration {
            for (k, &warp_id) in trace.warped_ids.iter().enumerate().skip(1) {
                let mut stage = Volume::new(dims, pass.tape.values(warp_id).to_vec())?;
                stage.spacing = source.spacing;
                emit(out_dir, &mut written, &format!("warp_stage{}.rvol", k), &stage)?;
                stage_artifacts += 1;
            }
        }
    }

    Ok(InferOutputs {
        extracted,
        mask,
        warped,
        transform,
        written,
        stage_artifacts,
    })
}
