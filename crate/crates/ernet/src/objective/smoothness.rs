//! Mask smoothness: squared l2-norm of the forward-difference derivative.

use crate::error::{Error, Result};
use crate::tensor::{GradSink, Tape, TensorId, ValueView};

fn spatial_dims(shape: &[usize]) -> Option<[usize; 3]> {
    match shape {
        [w, h, d] => Some([*w, *h, *d]),
        [1, w, h, d] => Some([*w, *h, *d]),
        _ => None,
    }
}

pub(crate) fn smoothness_value(mask: &[f64], dims: [usize; 3]) -> f64 {
    let [w, h, d] = dims;
    let mut total = 0.0;
    for x in 0..w {
        for y in 0..h {
            let row = &mask[(x * h + y) * d..(x * h + y + 1) * d];
            for z in 0..d - 1 {
                let diff = row[z + 1] - row[z];
                total += diff * diff;
            }
            if y + 1 < h {
                let next = &mask[(x * h + y + 1) * d..(x * h + y + 2) * d];
                for z in 0..d {
                    let diff = next[z] - row[z];
                    total += diff * diff;
                }
            }
            if x + 1 < w {
                let next = &mask[((x + 1) * h + y) * d..((x + 1) * h + y + 1) * d];
                for z in 0..d {
                    let diff = next[z] - row[z];
                    total += diff * diff;
                }
            }
        }
    }
    total
}

fn smoothness_grad(mask: &[f64], dims: [usize; 3], gout: f64, grad: &mut [f64]) {
    let [w, h, d] = dims;
    let idx = |x: usize, y: usize, z: usize| (x * h + y) * d + z;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let center = mask[idx(x, y, z)];
                let mut g = 0.0;
                if x + 1 < w {
                    g -= 2.0 * (mask[idx(x + 1, y, z)] - center);
                }
                if x > 0 {
                    g += 2.0 * (center - mask[idx(x - 1, y, z)]);
                }
                if y + 1 < h {
                    g -= 2.0 * (mask[idx(x, y + 1, z)] - center);
                }
                if y > 0 {
                    g += 2.0 * (center - mask[idx(x, y - 1, z)]);
                }
                if z + 1 < d {
                    g -= 2.0 * (mask[idx(x, y, z + 1)] - center);
                }
                if z > 0 {
                    g += 2.0 * (center - mask[idx(x, y, z - 1)]);
                }
                grad[idx(x, y, z)] += gout * g;
            }
        }
    }
}

/// Sum over voxels of squared forward differences along x, y, and z.
/// Difference terms whose +1 neighbor falls outside the grid are omitted.
pub fn mask_smoothness(tape: &mut Tape, mask: TensorId) -> Result<TensorId> {
    let shape = tape.shape(mask).to_vec();
    let Some(dims) = spatial_dims(&shape) else {
        return Err(Error::invalid(format!(
            "mask_smoothness: expected a 3D mask, got {:?}",
            shape
        )));
    };
    let value = smoothness_value(tape.values(mask), dims);
    let backward = Box::new(
        move |view: &ValueView<'_>, gout: &[f64], sink: &mut GradSink<'_>| {
            let values = view.values(mask).to_vec();
            if let Some(grad) = sink.entry(mask) {
                smoothness_grad(&values, dims, gout[0], grad);
            }
        },
    );
    tape.custom(&[mask], vec![value], &[], backward)
}
