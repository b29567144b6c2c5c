//! Forward and backward kernels behind the tape ops.
//!
//! Plain sequential loops over row-major `[c, w, h, d]` grids with the last
//! axis contiguous. The stride-1 convolution paths reduce to shifted-slice
//! fused multiply-adds, which is what carries the training loop.

use super::{DiffTensor, EwKind, GradSink, TensorId};

pub(super) fn ew_forward(kind: EwKind, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    match kind {
        EwKind::Add => {
            for i in 0..a.len() {
                out[i] = a[i] + b[i];
            }
        }
        EwKind::Sub => {
            for i in 0..a.len() {
                out[i] = a[i] - b[i];
            }
        }
        EwKind::Mul => {
            for i in 0..a.len() {
                out[i] = a[i] * b[i];
            }
        }
        EwKind::Max => {
            for i in 0..a.len() {
                out[i] = a[i].max(b[i]);
            }
        }
    }
    out
}

pub(super) fn ew_scalar_forward(kind: EwKind, a: &[f64], s: f64) -> Vec<f64> {
    match kind {
        EwKind::Add => a.iter().map(|v| v + s).collect(),
        EwKind::Sub => a.iter().map(|v| v - s).collect(),
        EwKind::Mul => a.iter().map(|v| v * s).collect(),
        EwKind::Max => a.iter().map(|v| v.max(s)).collect(),
    }
}

pub(super) fn ew_backward(
    kind: EwKind,
    tensors: &[DiffTensor],
    a: TensorId,
    b: TensorId,
    _out: TensorId,
    gout: &[f64],
    sink: &mut GradSink<'_>,
) {
    let av = &tensors[a.0 as usize].values;
    let bv = &tensors[b.0 as usize].values;
    let b_is_scalar = bv.len() == 1 && av.len() != 1;
    match kind {
        EwKind::Add => {
            if let Some(ga) = sink.entry(a) {
                for (g, go) in ga.iter_mut().zip(gout) {
                    *g += go;
                }
            }
            if let Some(gb) = sink.entry(b) {
                if b_is_scalar {
                    gb[0] += gout.iter().sum::<f64>();
                } else {
                    for (g, go) in gb.iter_mut().zip(gout) {
                        *g += go;
                    }
                }
            }
        }
        EwKind::Sub => {
            if let Some(ga) = sink.entry(a) {
                for (g, go) in ga.iter_mut().zip(gout) {
                    *g += go;
                }
            }
            if let Some(gb) = sink.entry(b) {
                if b_is_scalar {
                    gb[0] -= gout.iter().sum::<f64>();
                } else {
                    for (g, go) in gb.iter_mut().zip(gout) {
                        *g -= go;
                    }
                }
            }
        }
        EwKind::Mul => {
            if let Some(ga) = sink.entry(a) {
                if b_is_scalar {
                    for (g, go) in ga.iter_mut().zip(gout) {
                        *g += go * bv[0];
                    }
                } else {
                    for i in 0..gout.len() {
                        ga[i] += gout[i] * bv[i];
                    }
                }
            }
            if let Some(gb) = sink.entry(b) {
                if b_is_scalar {
                    gb[0] += gout.iter().zip(av).map(|(go, x)| go * x).sum::<f64>();
                } else {
                    for i in 0..gout.len() {
                        gb[i] += gout[i] * av[i];
                    }
                }
            }
        }
        EwKind::Max => {
            // Ties route the gradient to the first operand.
            if let Some(ga) = sink.entry(a) {
                for i in 0..gout.len() {
                    let bi = if b_is_scalar { bv[0] } else { bv[i] };
                    if av[i] >= bi {
                        ga[i] += gout[i];
                    }
                }
            }
            if let Some(gb) = sink.entry(b) {
                for i in 0..gout.len() {
                    let bi = if b_is_scalar { bv[0] } else { bv[i] };
                    if av[i] < bi {
                        if b_is_scalar {
                            gb[0] += gout[i];
                        } else {
                            gb[i] += gout[i];
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn ew_scalar_backward(
    kind: EwKind,
    tensors: &[DiffTensor],
    a: TensorId,
    scalar: f64,
    gout: &[f64],
    sink: &mut GradSink<'_>,
) {
    let av = &tensors[a.0 as usize].values;
    if let Some(ga) = sink.entry(a) {
        match kind {
            EwKind::Add | EwKind::Sub => {
                for (g, go) in ga.iter_mut().zip(gout) {
                    *g += go;
                }
            }
            EwKind::Mul => {
                for (g, go) in ga.iter_mut().zip(gout) {
                    *g += go * scalar;
                }
            }
            EwKind::Max => {
                for i in 0..gout.len() {
                    if av[i] >= scalar {
                        ga[i] += gout[i];
                    }
                }
            }
        }
    }
}

/// Output index range `[lo, hi)` such that `o*stride + delta - padding`
/// stays inside `[0, n_in)`.
fn tap_range(n_in: usize, n_out: usize, stride: usize, padding: usize, delta: usize) -> (usize, usize) {
    let shift = padding as isize - delta as isize;
    let lo = if shift > 0 {
        ((shift + stride as isize - 1) / stride as isize) as usize
    } else {
        0
    };
    let max_in = n_in as isize - 1 + shift;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = ((max_in / stride as isize) as usize + 1).min(n_out);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv3d_forward(
    x: &[f64],
    xs: [usize; 4],
    kernel: &[f64],
    ks: [usize; 5],
    bias: &[f64],
    stride: usize,
    padding: usize,
    out: &mut [f64],
    os: [usize; 4],
) {
    let [cin, w, h, d] = xs;
    let [cout, _, kw, kh, kd] = ks;
    let [_, ow, oh, od] = os;
    let out_spatial = ow * oh * od;
    for co in 0..cout {
        out[co * out_spatial..(co + 1) * out_spatial].fill(bias[co]);
    }
    for co in 0..cout {
        for ci in 0..cin {
            for dx in 0..kw {
                let (xlo, xhi) = tap_range(w, ow, stride, padding, dx);
                for dy in 0..kh {
                    let (ylo, yhi) = tap_range(h, oh, stride, padding, dy);
                    for dz in 0..kd {
                        let (zlo, zhi) = tap_range(d, od, stride, padding, dz);
                        if zlo >= zhi {
                            continue;
                        }
                        let wgt = kernel[(((co * cin + ci) * kw + dx) * kh + dy) * kd + dz];
                        for xo in xlo..xhi {
                            let xi = xo * stride + dx - padding;
                            for yo in ylo..yhi {
                                let yi = yo * stride + dy - padding;
                                let obase = ((co * ow + xo) * oh + yo) * od;
                                let xbase = ((ci * w + xi) * h + yi) * d;
                                if stride == 1 {
                                    let zi0 = zlo + dz - padding;
                                    let orow = &mut out[obase + zlo..obase + zhi];
                                    let xrow = &x[xbase + zi0..xbase + zi0 + (zhi - zlo)];
                                    for (o, v) in orow.iter_mut().zip(xrow) {
                                        *o += wgt * v;
                                    }
                                } else {
                                    for zo in zlo..zhi {
                                        let zi = zo * stride + dz - padding;
                                        out[obase + zo] += wgt * x[xbase + zi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv3d_backward(
    tensors: &[DiffTensor],
    x: TensorId,
    kernel: TensorId,
    bias: TensorId,
    stride: usize,
    padding: usize,
    out: TensorId,
    gout: &[f64],
    sink: &mut GradSink<'_>,
) {
    let xs = &tensors[x.0 as usize].shape;
    let ks = &tensors[kernel.0 as usize].shape;
    let os = &tensors[out.0 as usize].shape;
    let [cin, w, h, d] = [xs[0], xs[1], xs[2], xs[3]];
    let [cout, kw, kh, kd] = [ks[0], ks[2], ks[3], ks[4]];
    let [ow, oh, od] = [os[1], os[2], os[3]];
    let out_spatial = ow * oh * od;

    if let Some(gb) = sink.entry(bias) {
        for co in 0..cout {
            gb[co] += gout[co * out_spatial..(co + 1) * out_spatial]
                .iter()
                .sum::<f64>();
        }
    }

    if sink.wants(kernel) {
        let xv = &tensors[x.0 as usize].values;
        let gk = sink.entry(kernel).expect("kernel wants grad");
        for co in 0..cout {
            for ci in 0..cin {
                for dx in 0..kw {
                    let (xlo, xhi) = tap_range(w, ow, stride, padding, dx);
                    for dy in 0..kh {
                        let (ylo, yhi) = tap_range(h, oh, stride, padding, dy);
                        for dz in 0..kd {
                            let (zlo, zhi) = tap_range(d, od, stride, padding, dz);
                            let mut acc = 0.0;
                            for xo in xlo..xhi {
                                let xi = xo * stride + dx - padding;
                                for yo in ylo..yhi {
                                    let yi = yo * stride + dy - padding;
                                    let obase = ((co * ow + xo) * oh + yo) * od;
                                    let xbase = ((ci * w + xi) * h + yi) * d;
                                    if stride == 1 {
                                        let zi0 = zlo + dz - padding;
                                        let grow = &gout[obase + zlo..obase + zhi];
                                        let xrow = &xv[xbase + zi0..xbase + zi0 + (zhi - zlo)];
                                        for (go, v) in grow.iter().zip(xrow) {
                                            acc += go * v;
                                        }
                                    } else {
                                        for zo in zlo..zhi {
                                            let zi = zo * stride + dz - padding;
                                            acc += gout[obase + zo] * xv[xbase + zi];
                                        }
                                    }
                                }
                            }
                            gk[(((co * cin + ci) * kw + dx) * kh + dy) * kd + dz] += acc;
                        }
                    }
                }
            }
        }
    }

    if sink.wants(x) {
        let kv = &tensors[kernel.0 as usize].values;
        let gx = sink.entry(x).expect("input wants grad");
        for ci in 0..cin {
            for co in 0..cout {
                for dx in 0..kw {
                    let (xlo, xhi) = tap_range(w, ow, stride, padding, dx);
                    for dy in 0..kh {
                        let (ylo, yhi) = tap_range(h, oh, stride, padding, dy);
                        for dz in 0..kd {
                            let (zlo, zhi) = tap_range(d, od, stride, padding, dz);
                            if zlo >= zhi {
                                continue;
                            }
                            let wgt = kv[(((co * cin + ci) * kw + dx) * kh + dy) * kd + dz];
                            for xo in xlo..xhi {
                                let xi = xo * stride + dx - padding;
                                for yo in ylo..yhi {
                                    let yi = yo * stride + dy - padding;
                                    let obase = ((co * ow + xo) * oh + yo) * od;
                                    let xbase = ((ci * w + xi) * h + yi) * d;
                                    if stride == 1 {
                                        let zi0 = zlo + dz - padding;
                                        let grow = &gout[obase + zlo..obase + zhi];
                                        let xrow = &mut gx[xbase + zi0..xbase + zi0 + (zhi - zlo)];
                                        for (g, go) in xrow.iter_mut().zip(grow) {
                                            *g += wgt * go;
                                        }
                                    } else {
                                        for zo in zlo..zhi {
                                            let zi = zo * stride + dz - padding;
                                            gx[xbase + zi] += wgt * gout[obase + zo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn upsample2x_forward(x: &[f64], xs: [usize; 4], out: &mut [f64]) {
    let [c, w, h, d] = xs;
    let (ow, oh, od) = (w * 2, h * 2, d * 2);
    for ci in 0..c {
        for xo in 0..ow {
            for yo in 0..oh {
                let xbase = ((ci * w + xo / 2) * h + yo / 2) * d;
                let obase = ((ci * ow + xo) * oh + yo) * od;
                for zo in 0..od {
                    out[obase + zo] = x[xbase + zo / 2];
                }
            }
        }
    }
}

pub(super) fn upsample2x_backward(gout: &[f64], xs: [usize; 4], gx: &mut [f64]) {
    let [c, w, h, d] = xs;
    let (ow, oh, od) = (w * 2, h * 2, d * 2);
    for ci in 0..c {
        for xo in 0..ow {
            for yo in 0..oh {
                let xbase = ((ci * w + xo / 2) * h + yo / 2) * d;
                let obase = ((ci * ow + xo) * oh + yo) * od;
                for zo in 0..od {
                    gx[xbase + zo / 2] += gout[obase + zo];
                }
            }
        }
    }
}

pub(super) fn dense_forward(x: &[f64], w: &[f64], b: &[f64], m: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &w[i * n..(i + 1) * n];
        let mut acc = b[i];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[i] = acc;
    }
}

pub(super) fn dense_backward(
    tensors: &[DiffTensor],
    x: TensorId,
    weight: TensorId,
    bias: TensorId,
    gout: &[f64],
    sink: &mut GradSink<'_>,
) {
    let xv = &tensors[x.0 as usize].values;
    let wv = &tensors[weight.0 as usize].values;
    let n = xv.len();
    if let Some(gx) = sink.entry(x) {
        for (i, go) in gout.iter().enumerate() {
            let row = &wv[i * n..(i + 1) * n];
            for (g, wvij) in gx.iter_mut().zip(row) {
                *g += go * wvij;
            }
        }
    }
    if let Some(gw) = sink.entry(weight) {
        for (i, go) in gout.iter().enumerate() {
            let row = &mut gw[i * n..(i + 1) * n];
            for (g, xvj) in row.iter_mut().zip(xv) {
                *g += go * xvj;
            }
        }
    }
    if let Some(gb) = sink.entry(bias) {
        for (g, go) in gb.iter_mut().zip(gout) {
            *g += go;
        }
    }
}
