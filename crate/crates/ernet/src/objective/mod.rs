//! Training loss and evaluation metrics: windowed cross-correlation
//! similarity, mask-smoothness regularization, Dice overlap scores, and
//! connected-component counting.

mod ncc;
mod smoothness;

pub use ncc::{ncc_loss, NCC_EPSILON};
pub use smoothness::mask_smoothness;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_labels, AffineTransform, CoordinateFrame};
use crate::tensor::{Tape, TensorId};

/// Scalar pieces of one training-loss evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub similarity: f64,
    pub regularizer_per_stage: Vec<f64>,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn regularizer_sum(&self) -> f64 {
        self.regularizer_per_stage.iter().sum()
    }
}

/// Evaluation record for one source/target pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice_ext: f64,
    pub dice_reg: f64,
    pub per_label: Vec<(u32, f64)>,
    pub component_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossBreakdown>,
    /// Mean displacement error of the predicted transform against a known
    /// truth, in voxels; present only for synthetic data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub translation_error_voxels: Option<f64>,
}

/// Similarity plus weighted per-stage regularizers, assembled on the tape so
/// gradients flow through both terms.
pub fn total_loss(
    tape: &mut Tape,
    masks: &[TensorId],
    warped: TensorId,
    target: TensorId,
    lambda: f64,
    window: usize,
) -> Result<(TensorId, LossBreakdown)> {
    let sim_id = ncc_loss(tape, warped, target, window)?;
    let similarity = tape.scalar_value(sim_id);
    let mut regularizer_per_stage = Vec::with_capacity(masks.len());
    let mut reg_sum_id: Option<TensorId> = None;
    for &mask in masks {
        let reg_id = mask_smoothness(tape, mask)?;
        regularizer_per_stage.push(tape.scalar_value(reg_id));
        reg_sum_id = Some(match reg_sum_id {
            None => reg_id,
            Some(acc) => tape.add(acc, reg_id)?,
        });
    }
    let total_id = match reg_sum_id {
        None => sim_id,
        Some(reg_sum) => {
            let scaled = tape.mul_scalar(reg_sum, lambda);
            tape.add(sim_id, scaled)?
        }
    };
    let breakdown = LossBreakdown {
        similarity,
        regularizer_per_stage,
        lambda,
        total: tape.scalar_value(total_id),
    };
    Ok((total_id, breakdown))
}

fn ensure_binary(op: &'static str, mask: &[f64]) -> Result<()> {
    if mask.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("{op}: mask values must be 0 or 1")));
    }
    Ok(())
}

/// Volume overlap of two binary masks: `2|A∩B| / (|A|+|B|)`. Two empty
/// masks score 1.0; exactly one empty mask scores 0.0.
pub fn dice_ext(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "dice_ext",
            lhs: vec![predicted.len()],
            rhs: vec![truth.len()],
        });
    }
    ensure_binary("dice_ext", predicted)?;
    ensure_binary("dice_ext", truth)?;
    let mut a = 0usize;
    let mut b = 0usize;
    let mut inter = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == 1.0 {
            a += 1;
        }
        if t == 1.0 {
            b += 1;
        }
        if p == 1.0 && t == 1.0 {
            inter += 1;
        }
    }
    Ok(match (a, b) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * inter as f64 / (a + b) as f64,
    })
}

/// Warp the source segmentation with the predicted transform and score the
/// overlap per anatomical label. Returns the unweighted mean over the
/// nonzero labels present in either segmentation, plus the per-label list.
pub fn dice_reg(
    seg_source: &[u32],
    seg_target: &[u32],
    dims: [usize; 3],
    t: &AffineTransform,
    frame: &CoordinateFrame,
) -> (f64, Vec<(u32, f64)>) {
    let warped = warp_labels(seg_source, dims, t, frame);
    label_dice(&warped, seg_target)
}

/// Per-label Dice between two label grids (label 0 excluded), averaged
/// without weighting.
pub fn label_dice(a: &[u32], b: &[u32]) -> (f64, Vec<(u32, f64)>) {
    debug_assert_eq!(a.len(), b.len());
    let mut counts: BTreeMap<u32, (usize, usize, usize)> = BTreeMap::new();
    for (&va, &vb) in a.iter().zip(b) {
        if va != 0 {
            counts.entry(va).or_default().0 += 1;
        }
        if vb != 0 {
            counts.entry(vb).or_default().1 += 1;
        }
        if va != 0 && va == vb {
            counts.entry(va).or_default().2 += 1;
        }
    }
    if counts.is_empty() {
        return (1.0, Vec::new());
    }
    let per_label: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(label, (na, nb, inter))| (label, 2.0 * inter as f64 / (na + nb) as f64))
        .collect();
    let mean = per_label.iter().map(|(_, d)| d).sum::<f64>() / per_label.len() as f64;
    (mean, per_label)
}

/// Number of 6-connected foreground components, by breadth-first traversal.
pub fn count_components(mask: &[f64], dims: [usize; 3]) -> Result<usize> {
    ensure_binary("count_components", mask)?;
    let [w, h, d] = dims;
    debug_assert_eq!(mask.len(), w * h * d);
    let mut visited = vec![false; mask.len()];
    let mut components = 0usize;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if mask[start] != 1.0 || visited[start] {
            continue;
        }
        components += 1;
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let z = i % d;
            let y = (i / d) % h;
            let x = i / (d * h);
            let mut visit = |j: usize| {
                if mask[j] == 1.0 && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - h * d);
            }
            if x + 1 < w {
                visit(i + h * d);
            }
            if y > 0 {
                visit(i - d);
            }
            if y + 1 < h {
                visit(i + d);
            }
            if z > 0 {
                visit(i - 1);
            }
            if z + 1 < d {
                visit(i + 1);
            }
        }
    }
    Ok(components)
}

/// Mean magnitude of the forward-difference gradient; the sharpness score
/// used to compare single-interpolation warping against repeated
/// resampling.
pub fn mean_gradient_magnitude(values: &[f64], dims: [usize; 3]) -> f64 {
    let [w, h, d] = dims;
    if w < 2 || h < 2 || d < 2 {
        return 0.0;
    }
    let idx = |x: usize, y: usize, z: usize| (x * h + y) * d + z;
    let mut total = 0.0;
    let mut count = 0usize;
    for x in 0..w - 1 {
        for y in 0..h - 1 {
            for z in 0..d - 1 {
                let c = values[idx(x, y, z)];
                let gx = values[idx(x + 1, y, z)] - c;
                let gy = values[idx(x, y + 1, z)] - c;
                let gz = values[idx(x, y, z + 1)] - c;
                total += (gx * gx + gy * gy + gz * gz).sqrt();
                count += 1;
            }
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests;
