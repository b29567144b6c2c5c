//! Differentiable backward warping and the on-tape composition layer.

use super::{AffineTransform, CoordinateFrame, Mat4};
use crate::error::{Error, Result};
use crate::tensor::{GradSink, Tape, TensorId};

/// Voxel-index sampling matrix of a normalized-centered 12-parameter
/// transform: the conjugation `N^-1 * A * N` written out directly so it can
/// also be differentiated entry-by-entry.
fn voxel_matrix(params: &[f64], frame: &CoordinateFrame) -> Mat4 {
    let (s, c) = frame.axis_maps();
    let mut v = [[0.0; 4]; 4];
    v[3][3] = 1.0;
    for r in 0..3 {
        for col in 0..3 {
            v[r][col] = params[4 * r + col] * s[col] / s[r];
        }
        let dot = params[4 * r] * c[0] + params[4 * r + 1] * c[1] + params[4 * r + 2] * c[2];
        v[r][3] = (dot + params[4 * r + 3] - c[r]) / s[r];
    }
    v
}

/// Trilinear sample of `source` at the image of every output voxel under
/// `matrix` (voxel coordinates in, voxel coordinates out). Coordinates
/// outside the grid contribute zero, matching the clamped hat weights.
pub fn trilinear_warp_values(source: &[f64], dims: [usize; 3], matrix: &Mat4) -> Vec<f64> {
    let [w, h, d] = dims;
    let mut out = vec![0.0; w * h * d];
    let (wi, hi, di) = (w as isize, h as isize, d as isize);
    let mut idx = 0usize;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let (xf, yf, zf) = (x as f64, y as f64, z as f64);
                let mut u = [0.0; 3];
                for r in 0..3 {
                    u[r] = matrix[r][0] * xf + matrix[r][1] * yf + matrix[r][2] * zf
                        + matrix[r][3];
                }
                let base = [u[0].floor(), u[1].floor(), u[2].floor()];
                let f = [u[0] - base[0], u[1] - base[1], u[2] - base[2]];
                let (ix, iy, iz) = (base[0] as isize, base[1] as isize, base[2] as isize);
                let mut acc = 0.0;
                for corner in 0..8 {
                    let (ax, ay, az) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let (cx, cy, cz) = (ix + ax as isize, iy + ay as isize, iz + az as isize);
                    if cx < 0 || cy < 0 || cz < 0 || cx >= wi || cy >= hi || cz >= di {
                        continue;
                    }
                    let weight = (if ax == 1 { f[0] } else { 1.0 - f[0] })
                        * (if ay == 1 { f[1] } else { 1.0 - f[1] })
                        * (if az == 1 { f[2] } else { 1.0 - f[2] });
                    acc += weight
                        * source[((cx as usize * h) + cy as usize) * d + cz as usize];
                }
                out[idx] = acc;
                idx += 1;
            }
        }
    }
    out
}

/// Warp a plain value grid with an [`AffineTransform`] (no tape involved).
pub fn warp_values(
    source: &[f64],
    dims: [usize; 3],
    t: &AffineTransform,
    frame: &CoordinateFrame,
) -> Vec<f64> {
    trilinear_warp_values(source, dims, &voxel_matrix(&t.params, frame))
}

/// Spatial transformation layer: resample `source` (a `[w, h, d]` tensor)
/// under the 12-parameter transform tensor. Differentiable with respect to
/// both the source values and the transform entries.
pub fn warp(
    tape: &mut Tape,
    source: TensorId,
    transform: TensorId,
    frame: &CoordinateFrame,
) -> Result<TensorId> {
    let dims_v: Vec<usize> = tape.shape(source).to_vec();
    if dims_v.len() != 3 {
        return Err(Error::invalid(format!(
            "warp: source must be a [w,h,d] grid, got {:?}",
            dims_v
        )));
    }
    if tape.tensor(transform).numel() != 12 {
        return Err(Error::invalid(format!(
            "warp: transform must hold 12 values, got {:?}",
            tape.shape(transform)
        )));
    }
    let dims = [dims_v[0], dims_v[1], dims_v[2]];
    if dims != frame.extents {
        return Err(Error::ShapeMismatch {
            op: "warp",
            lhs: dims_v.to_vec(),
            rhs: frame.extents.to_vec(),
        });
    }
    let matrix = voxel_matrix(tape.values(transform), frame);
    let values = trilinear_warp_values(tape.values(source), dims, &matrix);
    let frame = *frame;
    let backward = Box::new(
        move |view: &crate::tensor::ValueView<'_>, gout: &[f64], sink: &mut GradSink<'_>| {
            warp_backward(view, gout, sink, source, transform, dims, &frame);
        },
    );
    tape.custom(&[source, transform], values, &dims_v, backward)
}

fn warp_backward(
    view: &crate::tensor::ValueView<'_>,
    gout: &[f64],
    sink: &mut GradSink<'_>,
    source: TensorId,
    transform: TensorId,
    dims: [usize; 3],
    frame: &CoordinateFrame,
) {
    let [w, h, d] = dims;
    let (wi, hi, di) = (w as isize, h as isize, d as isize);
    let params = view.values(transform).to_vec();
    let matrix = voxel_matrix(&params, frame);
    let src = view.values(source).to_vec();
    let wants_source = sink.wants(source);
    let wants_transform = sink.wants(transform);
    let mut grad_matrix = [[0.0; 4]; 3];

    {
        let mut gsrc_store;
        let gsrc: Option<&mut [f64]> = if wants_source {
            gsrc_store = sink.entry(source);
            gsrc_store.as_deref_mut()
        } else {
            None
        };
        let mut gsrc = gsrc;

        let mut idx = 0usize;
        for x in 0..w {
            for y in 0..h {
                for z in 0..d {
                    let g = gout[idx];
                    idx += 1;
                    if g == 0.0 {
                        continue;
                    }
                    let (xf, yf, zf) = (x as f64, y as f64, z as f64);
                    let mut u = [0.0; 3];
                    for r in 0..3 {
                        u[r] = matrix[r][0] * xf
                            + matrix[r][1] * yf
                            + matrix[r][2] * zf
                            + matrix[r][3];
                    }
                    let base = [u[0].floor(), u[1].floor(), u[2].floor()];
                    let f = [u[0] - base[0], u[1] - base[1], u[2] - base[2]];
                    let (ix, iy, iz) = (base[0] as isize, base[1] as isize, base[2] as isize);
                    let mut ds_du = [0.0; 3];
                    for corner in 0..8 {
                        let (ax, ay, az) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                        let (cx, cy, cz) = (ix + ax as isize, iy + ay as isize, iz + az as isize);
                        if cx < 0 || cy < 0 || cz < 0 || cx >= wi || cy >= hi || cz >= di {
                            continue;
                        }
                        let wx = if ax == 1 { f[0] } else { 1.0 - f[0] };
                        let wy = if ay == 1 { f[1] } else { 1.0 - f[1] };
                        let wz = if az == 1 { f[2] } else { 1.0 - f[2] };
                        let sidx = ((cx as usize * h) + cy as usize) * d + cz as usize;
                        if let Some(gs) = gsrc.as_deref_mut() {
                            gs[sidx] += g * wx * wy * wz;
                        }
                        if wants_transform {
                            let val = src[sidx];
                            let sx = if ax == 1 { 1.0 } else { -1.0 };
                            let sy = if ay == 1 { 1.0 } else { -1.0 };
                            let sz = if az == 1 { 1.0 } else { -1.0 };
                            ds_du[0] += val * sx * wy * wz;
                            ds_du[1] += val * wx * sy * wz;
                            ds_du[2] += val * wx * wy * sz;
                        }
                    }
                    if wants_transform {
                        for r in 0..3 {
                            let gr = g * ds_du[r];
                            grad_matrix[r][0] += gr * xf;
                            grad_matrix[r][1] += gr * yf;
                            grad_matrix[r][2] += gr * zf;
                            grad_matrix[r][3] += gr;
                        }
                    }
                }
            }
        }
    }

    if wants_transform {
        // The voxel matrix is linear in the normalized transform entries;
        // push the matrix gradient through that relation.
        let (s, c) = frame.axis_maps();
        let mut gparams = vec![0.0; 12];
        for r in 0..3 {
            for col in 0..3 {
                gparams[4 * r + col] =
                    (grad_matrix[r][col] * s[col] + grad_matrix[r][3] * c[col]) / s[r];
            }
            gparams[4 * r + 3] = grad_matrix[r][3] / s[r];
        }
        sink.accumulate(transform, &gparams);
    }
}

/// Nearest-neighbor resampling of an integer label grid. Out-of-bounds
/// samples become label 0 (background). Evaluation only.
pub fn warp_labels(
    labels: &[u32],
    dims: [usize; 3],
    t: &AffineTransform,
    frame: &CoordinateFrame,
) -> Vec<u32> {
    let [w, h, d] = dims;
    let matrix = voxel_matrix(&t.params, frame);
    let (wi, hi, di) = (w as isize, h as isize, d as isize);
    let mut out = vec![0u32; w * h * d];
    let mut idx = 0usize;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let (xf, yf, zf) = (x as f64, y as f64, z as f64);
                let mut u = [0.0; 3];
                for r in 0..3 {
                    u[r] = matrix[r][0] * xf + matrix[r][1] * yf + matrix[r][2] * zf
                        + matrix[r][3];
                }
                let (cx, cy, cz) = (
                    u[0].round() as isize,
                    u[1].round() as isize,
                    u[2].round() as isize,
                );
                if cx >= 0 && cy >= 0 && cz >= 0 && cx < wi && cy < hi && cz < di {
                    out[idx] = labels[((cx as usize * h) + cy as usize) * d + cz as usize];
                }
                idx += 1;
            }
        }
    }
    out
}

/// Composition layer: combine two 12-parameter transform tensors so that the
/// result applies `inner` first, then `outer` (matrix product
/// `outer * inner`). Differentiable in both operands.
pub fn compose_on_tape(tape: &mut Tape, inner: TensorId, outer: TensorId) -> Result<TensorId> {
    for id in [inner, outer] {
        if tape.tensor(id).numel() != 12 {
            return Err(Error::invalid(format!(
                "compose: transforms must hold 12 values, got {:?}",
                tape.shape(id)
            )));
        }
    }
    let iv = tape.values(inner);
    let ov = tape.values(outer);
    let values = compose_params(ov, iv);
    let backward = Box::new(
        move |view: &crate::tensor::ValueView<'_>, gout: &[f64], sink: &mut GradSink<'_>| {
            let iv = view.values(inner).to_vec();
            let ov = view.values(outer).to_vec();
            // c[r][col] = sum_k o[r][k] * i[k][col]  (+ o[r][3] for col 3),
            // with the inner's implicit last row (0,0,0,1).
            if sink.wants(outer) {
                let mut go = vec![0.0; 12];
                for r in 0..3 {
                    for k in 0..3 {
                        let mut acc = 0.0;
                        for col in 0..4 {
                            acc += gout[4 * r + col] * iv[4 * k + col];
                        }
                        go[4 * r + k] = acc;
                    }
                    go[4 * r + 3] = gout[4 * r + 3];
                }
                sink.accumulate(outer, &go);
            }
            if sink.wants(inner) {
                let mut gi = vec![0.0; 12];
                for k in 0..3 {
                    for col in 0..4 {
                        let mut acc = 0.0;
                        for r in 0..3 {
                            acc += ov[4 * r + k] * gout[4 * r + col];
                        }
                        gi[4 * k + col] = acc;
                    }
                }
                sink.accumulate(inner, &gi);
            }
        },
    );
    tape.custom(&[inner, outer], values.to_vec(), &[12], backward)
}

fn compose_params(outer: &[f64], inner: &[f64]) -> [f64; 12] {
    let mut out = [0.0; 12];
    for r in 0..3 {
        for col in 0..4 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += outer[4 * r + k] * inner[4 * k + col];
            }
            if col == 3 {
                acc += outer[4 * r + 3];
            }
            out[4 * r + col] = acc;
        }
    }
    out
}
