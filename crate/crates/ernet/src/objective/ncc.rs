//! Windowed local cross-correlation loss.
//!
//! For each voxel, statistics are gathered over a `window`^3 neighborhood
//! clipped at the volume boundary. The loss is minus the mean over voxels of
//! `cross^2 / (var_a * var_b + eps)`; squaring makes the loss sign-robust
//! and keeps it in [-1, 0]. Box sums run as three separable sliding passes,
//! so the cost is linear in the voxel count.

use crate::error::{Error, Result};
use crate::tensor::{GradSink, Tape, TensorId, ValueView};

pub const NCC_EPSILON: f64 = 1e-5;

/// Clipped 1D box sum along `axis`, applied in place over every line.
fn box_pass(values: &mut Vec<f64>, dims: [usize; 3], axis: usize, rad: usize) {
    let [w, h, d] = dims;
    let n = dims[axis];
    let mut line = vec![0.0; n];
    let (outer_a, outer_b) = match axis {
        0 => (h, d),
        1 => (w, d),
        _ => (w, h),
    };
    let index = |a: usize, b: usize, i: usize| -> usize {
        match axis {
            0 => (i * h + a) * d + b,
            1 => (a * h + i) * d + b,
            _ => (a * h + b) * d + i,
        }
    };
    for a in 0..outer_a {
        for b in 0..outer_b {
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = values[index(a, b, i)];
            }
            let mut acc = 0.0;
            for v in line.iter().take(rad.min(n - 1) + 1) {
                acc += v;
            }
            for i in 0..n {
                values[index(a, b, i)] = acc;
                if i + rad + 1 < n {
                    acc += line[i + rad + 1];
                }
                if i >= rad {
                    acc -= line[i - rad];
                }
            }
        }
    }
}

fn box_filter(values: &[f64], dims: [usize; 3], rad: usize) -> Vec<f64> {
    let mut out = values.to_vec();
    for axis in 0..3 {
        box_pass(&mut out, dims, axis, rad);
    }
    out
}

fn axis_counts(n: usize, rad: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i + rad).min(n - 1) - i.saturating_sub(rad) + 1) as f64)
        .collect()
}

struct WindowStats {
    count: Vec<f64>,
    sum_a: Vec<f64>,
    sum_b: Vec<f64>,
    sum_aa: Vec<f64>,
    sum_bb: Vec<f64>,
    sum_ab: Vec<f64>,
}

fn window_stats(a: &[f64], b: &[f64], dims: [usize; 3], rad: usize) -> WindowStats {
    let [w, h, d] = dims;
    let (cx, cy, cz) = (axis_counts(w, rad), axis_counts(h, rad), axis_counts(d, rad));
    let mut count = vec![0.0; a.len()];
    let mut idx = 0;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                count[idx] = cx[x] * cy[y] * cz[z];
                idx += 1;
            }
        }
    }
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    WindowStats {
        count,
        sum_a: box_filter(a, dims, rad),
        sum_b: box_filter(b, dims, rad),
        sum_aa: box_filter(&aa, dims, rad),
        sum_bb: box_filter(&bb, dims, rad),
        sum_ab: box_filter(&ab, dims, rad),
    }
}

pub(crate) fn ncc_value(a: &[f64], b: &[f64], dims: [usize; 3], window: usize) -> f64 {
    let rad = window / 2;
    let stats = window_stats(a, b, dims, rad);
    let mut total = 0.0;
    for i in 0..a.len() {
        let n = stats.count[i];
        let cross = stats.sum_ab[i] - stats.sum_a[i] * stats.sum_b[i] / n;
        let var_a = (stats.sum_aa[i] - stats.sum_a[i] * stats.sum_a[i] / n).max(0.0);
        let var_b = (stats.sum_bb[i] - stats.sum_b[i] * stats.sum_b[i] / n).max(0.0);
        total += cross * cross / (var_a * var_b + NCC_EPSILON);
    }
    -total / a.len() as f64
}

fn ncc_backward_one_side(
    primary: &[f64],
    other: &[f64],
    stats: &WindowStats,
    dims: [usize; 3],
    rad: usize,
    gout: f64,
    grad: &mut [f64],
) {
    // d(cc_p)/d(primary_q) = A_p * (other_q - mean_other_p)
    //                      - B_p * (primary_q - mean_primary_p)
    // with A = 2 cross / den and B = 2 cross^2 var_other / den^2; the sum
    // over windows containing q is another box filter of four fields.
    let voxels = primary.len();
    let mut field_a = vec![0.0; voxels];
    let mut field_a_mean_other = vec![0.0; voxels];
    let mut field_b = vec![0.0; voxels];
    let mut field_b_mean_primary = vec![0.0; voxels];
    for i in 0..voxels {
        let n = stats.count[i];
        let (sum_p, sum_o) = (stats.sum_a[i], stats.sum_b[i]);
        let cross = stats.sum_ab[i] - sum_p * sum_o / n;
        let var_p = (stats.sum_aa[i] - sum_p * sum_p / n).max(0.0);
        let var_o = (stats.sum_bb[i] - sum_o * sum_o / n).max(0.0);
        let den = var_p * var_o + NCC_EPSILON;
        let a_p = 2.0 * cross / den;
        let b_p = 2.0 * cross * cross * var_o / (den * den);
        field_a[i] = a_p;
        field_a_mean_other[i] = a_p * sum_o / n;
        field_b[i] = b_p;
        field_b_mean_primary[i] = b_p * sum_p / n;
    }
    let box_a = box_filter(&field_a, dims, rad);
    let box_a_mean_other = box_filter(&field_a_mean_other, dims, rad);
    let box_b = box_filter(&field_b, dims, rad);
    let box_b_mean_primary = box_filter(&field_b_mean_primary, dims, rad);
    let scale = -gout / voxels as f64;
    for q in 0..voxels {
        grad[q] += scale
            * (other[q] * box_a[q] - box_a_mean_other[q] - primary[q] * box_b[q]
                + box_b_mean_primary[q]);
    }
}

/// Negative windowed squared local correlation between two `[w, h, d]`
/// tensors. Differentiable in both inputs; the window must be odd.
pub fn ncc_loss(tape: &mut Tape, warped: TensorId, target: TensorId, window: usize) -> Result<TensorId> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::invalid(format!(
            "ncc_loss: window must be odd, got {window}"
        )));
    }
    let shape: Vec<usize> = tape.shape(warped).to_vec();
    if shape != tape.shape(target) {
        return Err(Error::ShapeMismatch {
            op: "ncc_loss",
            lhs: shape,
            rhs: tape.shape(target).to_vec(),
        });
    }
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "ncc_loss: expected [w,h,d] inputs, got {:?}",
            shape
        )));
    }
    let dims = [shape[0], shape[1], shape[2]];
    let value = ncc_value(tape.values(warped), tape.values(target), dims, window);
    let rad = window / 2;
    let backward = Box::new(
        move |view: &ValueView<'_>, gout: &[f64], sink: &mut GradSink<'_>| {
            let a = view.values(warped);
            let b = view.values(target);
            if sink.wants(warped) {
                let stats = window_stats(a, b, dims, rad);
                let mut grad = vec![0.0; a.len()];
                ncc_backward_one_side(a, b, &stats, dims, rad, gout[0], &mut grad);
                sink.accumulate(warped, &grad);
            }
            if sink.wants(target) {
                let stats = window_stats(b, a, dims, rad);
                let mut grad = vec![0.0; b.len()];
                ncc_backward_one_side(b, a, &stats, dims, rad, gout[0], &mut grad);
                sink.accumulate(target, &grad);
            }
        },
    );
    tape.custom(&[warped, target], vec![value], &[], backward)
}
