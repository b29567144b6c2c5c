//! Evaluation against datasets that carry ground truth.

use crate::data::{Dataset, Sample};
use crate::error::Result;
use crate::extraction::Mode;
use crate::geometry::{map_point, to_voxel_matrix, AffineTransform, CoordinateFrame};
use crate::objective::{count_components, dice_ext, dice_reg, MetricReport};

use super::{forward, ErnetModel};

#[derive(Debug, Clone)]
pub struct EvaluationSummary {
    pub reports: Vec<(String, MetricReport)>,
    pub mean_dice_ext: f64,
    pub std_dice_ext: f64,
    pub mean_dice_reg: f64,
    pub std_dice_reg: f64,
    pub mean_translation_error: Option<f64>,
    /// Samples skipped for missing ground truth.
    pub skipped: usize,
}

impl EvaluationSummary {
    pub fn to_json(&self) -> Result<String> {
        let records: Vec<serde_json::Value> = self
            .reports
            .iter()
            .map(|(name, report)| {
                Ok(serde_json::json!({
                    "name": name,
                    "report": serde_json::to_value(report)?,
                }))
            })
            .collect::<Result<_>>()?;
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "pairs": records,
            "summary": {
                "mean_dice_ext": self.mean_dice_ext,
                "std_dice_ext": self.std_dice_ext,
                "mean_dice_reg": self.mean_dice_reg,
                "std_dice_reg": self.std_dice_reg,
                "mean_translation_error_voxels": self.mean_translation_error,
                "skipped": self.skipped,
            },
        }))?)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("name,dice_ext,dice_reg,component_count,translation_error_voxels\n");
        for (name, report) in &self.reports {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{}\n",
                name,
                report.dice_ext,
                report.dice_reg,
                report.component_count,
                report
                    .translation_error_voxels
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default()
            ));
        }
        out
    }
}

/// Mean displacement between two transforms over the support voxels, in
/// voxel units: both maps are applied in their raw voxel form and the
/// distance between the mapped points is averaged.
pub fn mean_displacement_error(
    predicted: &AffineTransform,
    truth: &AffineTransform,
    support: &[f64],
    dims: [usize; 3],
    frame: &CoordinateFrame,
) -> f64 {
    let vp = AffineTransform::from_matrix(&to_voxel_matrix(predicted, frame));
    let vt = AffineTransform::from_matrix(&to_voxel_matrix(truth, frame));
    let [w, h, d] = dims;
    let mut total = 0.0;
    let mut count = 0usize;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                if support[(x * h + y) * d + z] == 0.0 {
                    continue;
                }
                let p = [x as f64, y as f64, z as f64];
                let a = map_point(&vp, p);
                let b = map_point(&vt, p);
                let dx = a[0] - b[0];
                let dy = a[1] - b[1];
                let dz = a[2] - b[2];
                total += (dx * dx + dy * dy + dz * dz).sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn evaluate_sample(model: &ErnetModel, sample: &Sample) -> Result<Option<MetricReport>> {
    let (Some(truth_mask), Some(truth_labels), Some(target_labels)) = (
        &sample.truth_mask,
        &sample.truth_labels,
        &sample.target_labels,
    ) else {
        return Ok(None);
    };
    let dims = sample.source.dims;
    let frame = CoordinateFrame::new(dims)?;

    let pass = forward(model, &sample.source, &sample.target, Mode::Infer)?;
    if pass.degenerate {
        eprintln!("warning: evaluating a model with both stage counts zero; output equals source");
    }
    let mask = pass.cumulative_mask();
    let predicted = AffineTransform::from_params(pass.final_transform);
    drop(pass);

    let dice_extraction = dice_ext(&mask, truth_mask)?;
    let (dice_registration, per_label) =
        dice_reg(truth_labels, target_labels, dims, &predicted, &frame);
    let components = count_components(&mask, dims)?;

    // Loss numbers come from a separate soft-mask pass.
    let train_pass = forward(model, &sample.source, &sample.target, Mode::Train)?;
    let loss = train_pass.loss.clone();
    drop(train_pass);

    let translation_error = sample.truth_transform.as_ref().map(|truth| {
        // Error is averaged over the aligned (target-side) brain support.
        let support: Vec<f64> = crate::geometry::warp_labels(
            &truth_mask.iter().map(|&v| v as u32).collect::<Vec<_>>(),
            dims,
            truth,
            &frame,
        )
        .into_iter()
        .map(f64::from)
        .collect();
        mean_displacement_error(&predicted, truth, &support, dims, &frame)
    });

    Ok(Some(MetricReport {
        dice_ext: dice_extraction,
        dice_reg: dice_registration,
        per_label,
        component_count: components,
        loss,
        translation_error_voxels: translation_error,
    }))
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Evaluate every sample with ground truth; samples without truth are
/// skipped with a warning and excluded from the aggregates (arithmetic mean
/// and population standard deviation).
pub fn evaluate(model: &ErnetModel, dataset: &Dataset) -> Result<EvaluationSummary> {
    let mut reports = Vec::new();
    let mut skipped = 0usize;
    for sample in &dataset.samples {
        match evaluate_sample(model, sample)? {
            Some(report) => reports.push((sample.name.clone(), report)),
            None => {
                eprintln!(
                    "warning: sample '{}' has no ground truth; skipping",
                    sample.name
                );
                skipped += 1;
            }
        }
    }
    let ext: Vec<f64> = reports.iter().map(|(_, r)| r.dice_ext).collect();
    let reg: Vec<f64> = reports.iter().map(|(_, r)| r.dice_reg).collect();
    let translations: Vec<f64> = reports
        .iter()
        .filter_map(|(_, r)| r.translation_error_voxels)
        .collect();
    let (mean_dice_ext, std_dice_ext) = mean_and_std(&ext);
    let (mean_dice_reg, std_dice_reg) = mean_and_std(&reg);
    let mean_translation_error = if translations.is_empty() {
        None
    } else {
        Some(translations.iter().sum::<f64>() / translations.len() as f64)
    };
    Ok(EvaluationSummary {
        reports,
        mean_dice_ext,
        std_dice_ext,
        mean_dice_reg,
        std_dice_reg,
        mean_translation_error,
        skipped,
    })
}
