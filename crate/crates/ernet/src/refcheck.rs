//! Independent brute-force references for the fast numeric paths.
//!
//! Everything here is a direct transliteration of the defining formula with
//! nested loops and no shortcuts. These functions intentionally share no code
//! with the implementations they check; they back the unit tests, the
//! equivalence sweeps, and the `verify` CLI command. Never used on the
//! training path.

use rand::Rng;

/// Central finite differences of a scalar function, one element at a time.
///
/// `f` must be pure. Step `h` is absolute; callers scale it to the data.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let saved = probe[i];
        probe[i] = saved + h;
        let up = f(&probe);
        probe[i] = saved - h;
        let down = f(&probe);
        probe[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error with a floor so near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Elementwise product by scalar loop.
pub fn naive_product(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    let mut out = vec![0.0; a.len()];
    for i in 0..a.len() {
        out[i] = a[i] * b[i];
    }
    out
}

/// Seven-loop 3D convolution. Input `[cin, w, h, d]`, kernel
/// `[cout, cin, k, k, k]`, bias `[cout]`. Returns `(values, out_shape)`.
pub fn naive_conv3d(
    x: &[f64],
    x_shape: [usize; 4],
    kernel: &[f64],
    k_shape: [usize; 5],
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [cin, w, h, d] = x_shape;
    let [cout, kcin, kw, kh, kd] = k_shape;
    assert_eq!(cin, kcin);
    assert_eq!(bias.len(), cout);
    let ow = (w + 2 * padding - kw) / stride + 1;
    let oh = (h + 2 * padding - kh) / stride + 1;
    let od = (d + 2 * padding - kd) / stride + 1;
    let mut out = vec![0.0; cout * ow * oh * od];
    for co in 0..cout {
        for xo in 0..ow {
            for yo in 0..oh {
                for zo in 0..od {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for dx in 0..kw {
                            for dy in 0..kh {
                                for dz in 0..kd {
                                    let xi = (xo * stride + dx) as isize - padding as isize;
                                    let yi = (yo * stride + dy) as isize - padding as isize;
                                    let zi = (zo * stride + dz) as isize - padding as isize;
                                    if xi < 0
                                        || yi < 0
                                        || zi < 0
                                        || xi >= w as isize
                                        || yi >= h as isize
                                        || zi >= d as isize
                                    {
                                        continue;
                                    }
                                    let xv = x[((ci * w + xi as usize) * h + yi as usize) * d
                                        + zi as usize];
                                    let kv = kernel[(((co * cin + ci) * kw + dx) * kh + dy) * kd
                                        + dz];
                                    acc += xv * kv;
                                }
                            }
                        }
                    }
                    out[((co * ow + xo) * oh + yo) * od + zo] = acc;
                }
            }
        }
    }
    (out, [cout, ow, oh, od])
}

/// Map a 3-point through a 4x4 homogeneous matrix and drop the 1.
pub fn map_point4(m: &[[f64; 4]; 4], p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, row) in m.iter().take(3).enumerate() {
        out[r] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
    }
    out
}

/// Trilinear warp as the full-grid sum of clamped hat weights: every output
/// voxel scans every source voxel. `matrix` maps output voxel indices to
/// source voxel coordinates.
pub fn naive_warp(source: &[f64], dims: [usize; 3], matrix: &[[f64; 4]; 4]) -> Vec<f64> {
    let [w, h, d] = dims;
    let mut out = vec![0.0; w * h * d];
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let p = map_point4(matrix, [x as f64, y as f64, z as f64]);
                let mut acc = 0.0;
                for o in 0..w {
                    for pp in 0..h {
                        for q in 0..d {
                            let wx = (1.0 - (p[0] - o as f64).abs()).max(0.0);
                            if wx == 0.0 {
                                continue;
                            }
                            let wy = (1.0 - (p[1] - pp as f64).abs()).max(0.0);
                            if wy == 0.0 {
                                continue;
                            }
                            let wz = (1.0 - (p[2] - q as f64).abs()).max(0.0);
                            if wz == 0.0 {
                                continue;
                            }
                            acc += source[(o * h + pp) * d + q] * wx * wy * wz;
                        }
                    }
                }
                out[(x * h + y) * d + z] = acc;
            }
        }
    }
    out
}

/// Windowed squared local correlation loss, direct per-voxel loops.
/// Windows are clipped at the boundary; the loss is minus the mean of
/// `cross^2 / (var_a * var_b + eps)` over all voxels.
pub fn naive_ncc(a: &[f64], b: &[f64], dims: [usize; 3], window: usize, eps: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(window % 2 == 1);
    let [w, h, d] = dims;
    let rad = (window / 2) as isize;
    let mut total = 0.0;
    for x in 0..w as isize {
        for y in 0..h as isize {
            for z in 0..d as isize {
                let mut n = 0.0;
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ox in (x - rad).max(0)..=(x + rad).min(w as isize - 1) {
                    for oy in (y - rad).max(0)..=(y + rad).min(h as isize - 1) {
                        for oz in (z - rad).max(0)..=(z + rad).min(d as isize - 1) {
                            let idx = ((ox as usize * h) + oy as usize) * d + oz as usize;
                            let (va, vb) = (a[idx], b[idx]);
                            n += 1.0;
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    }
                }
                let cross = sab - sa * sb / n;
                let var_a = (saa - sa * sa / n).max(0.0);
                let var_b = (sbb - sb * sb / n).max(0.0);
                total += cross * cross / (var_a * var_b + eps);
            }
        }
    }
    -total / (w * h * d) as f64
}

/// Mask smoothness as the sum of squared forward differences, triple loop.
/// Differences whose +1 neighbor falls outside the grid are omitted.
pub fn naive_smoothness(mask: &[f64], dims: [usize; 3]) -> f64 {
    let [w, h, d] = dims;
    let at = |x: usize, y: usize, z: usize| mask[(x * h + y) * d + z];
    let mut total = 0.0;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                if x + 1 < w {
                    let diff = at(x + 1, y, z) - at(x, y, z);
                    total += diff * diff;
                }
                if y + 1 < h {
                    let diff = at(x, y + 1, z) - at(x, y, z);
                    total += diff * diff;
                }
                if z + 1 < d {
                    let diff = at(x, y, z + 1) - at(x, y, z);
                    total += diff * diff;
                }
            }
        }
    }
    total
}

/// Dice by explicit set enumeration over voxel coordinates.
pub fn enum_dice(a: &[f64], b: &[f64], dims: [usize; 3]) -> f64 {
    let [w, h, d] = dims;
    let mut set_a = Vec::new();
    let mut set_b = Vec::new();
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let idx = (x * h + y) * d + z;
                if a[idx] != 0.0 {
                    set_a.push((x, y, z));
                }
                if b[idx] != 0.0 {
                    set_b.push((x, y, z));
                }
            }
        }
    }
    let inter = set_a.iter().filter(|c| set_b.contains(c)).count();
    if set_a.is_empty() && set_b.is_empty() {
        return 1.0;
    }
    if set_a.is_empty() || set_b.is_empty() {
        return 0.0;
    }
    2.0 * inter as f64 / (set_a.len() + set_b.len()) as f64
}

/// Per-label Dice of two integer label grids by set enumeration, averaged
/// over the nonzero labels present in either grid.
pub fn enum_label_dice(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut labels: Vec<u32> = a.iter().chain(b.iter()).copied().filter(|&l| l != 0).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for &label in &labels {
        let na = a.iter().filter(|&&v| v == label).count();
        let nb = b.iter().filter(|&&v| v == label).count();
        let inter = a
            .iter()
            .zip(b.iter())
            .filter(|&(&va, &vb)| va == label && vb == label)
            .count();
        total += if na + nb == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (na + nb) as f64
        };
    }
    total / labels.len() as f64
}

/// 6-connected component count by iterated minimum-label propagation
/// (deliberately not a BFS, so it is independent of the fast counter).
pub fn components_by_propagation(mask: &[bool], dims: [usize; 3]) -> usize {
    let [w, h, d] = dims;
    let idx = |x: usize, y: usize, z: usize| (x * h + y) * d + z;
    let mut label: Vec<usize> = (0..mask.len()).collect();
    loop {
        let mut changed = false;
        for x in 0..w {
            for y in 0..h {
                for z in 0..d {
                    let i = idx(x, y, z);
                    if !mask[i] {
                        continue;
                    }
                    let mut best = label[i];
                    let mut visit = |j: usize| {
                        if mask[j] && label[j] < best {
                            best = label[j];
                        }
                    };
                    if x > 0 {
                        visit(idx(x - 1, y, z));
                    }
                    if x + 1 < w {
                        visit(idx(x + 1, y, z));
                    }
                    if y > 0 {
                        visit(idx(x, y - 1, z));
                    }
                    if y + 1 < h {
                        visit(idx(x, y + 1, z));
                    }
                    if z > 0 {
                        visit(idx(x, y, z - 1));
                    }
                    if z + 1 < d {
                        visit(idx(x, y, z + 1));
                    }
                    if best < label[i] {
                        label[i] = best;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut roots: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m)
        .map(|(i, _)| label[i])
        .collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

/// Uniform noise volume smoothed with a truncated separable Gaussian.
/// Produces the smooth test inputs used by the gradient and warp sweeps.
pub fn smooth_random_volume(dims: [usize; 3], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let [w, h, d] = dims;
    let mut values: Vec<f64> = (0..w * h * d).map(|_| rng.random::<f64>()).collect();
    if sigma <= 0.0 {
        return values;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let dims = [w, h, d];
    for axis in 0..3 {
        let mut blurred = vec![0.0; values.len()];
        for x in 0..w {
            for y in 0..h {
                for z in 0..d {
                    let pos = [x as isize, y as isize, z as isize];
                    let mut acc = 0.0;
                    for (ti, tap) in taps.iter().enumerate() {
                        let mut q = pos;
                        q[axis] += ti as isize - radius;
                        if q[axis] < 0 || q[axis] >= dims[axis] as isize {
                            continue;
                        }
                        acc += tap * values[((q[0] as usize * h) + q[1] as usize) * d
                            + q[2] as usize];
                    }
                    blurred[(x * h + y) * d + z] = acc;
                }
            }
        }
        values = blurred;
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fd_of_sum_is_ones() {
        let x = [1.0, -2.0, 3.5];
        let grad = fd_gradient(&mut |v: &[f64]| v.iter().sum(), &x, 1e-4);
        for g in grad {
            assert!((g - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn fd_of_sum_of_squares_is_2x() {
        let x = [0.3, -1.2, 2.0, 0.0];
        let grad = fd_gradient(&mut |v: &[f64]| v.iter().map(|a| a * a).sum(), &x, 1e-4);
        for (g, xi) in grad.iter().zip(x.iter()) {
            assert!((g - 2.0 * xi).abs() < 1e-7, "{g} vs {}", 2.0 * xi);
        }
    }

    #[test]
    fn single_voxel_smoothness_is_six() {
        let mut mask = vec![0.0; 5 * 5 * 5];
        mask[(2 * 5 + 2) * 5 + 2] = 1.0;
        assert_eq!(naive_smoothness(&mask, [5, 5, 5]), 6.0);
    }

    #[test]
    fn constant_mask_smoothness_is_zero() {
        let mask = vec![0.7; 4 * 4 * 4];
        assert_eq!(naive_smoothness(&mask, [4, 4, 4]), 0.0);
    }

    #[test]
    fn enum_dice_half_overlap() {
        // |A| = 8, |B| = 8, |A ∩ B| = 4 inside a 4^3 grid.
        let mut a = vec![0.0; 64];
        let mut b = vec![0.0; 64];
        for i in 0..8 {
            a[i] = 1.0;
        }
        for i in 4..12 {
            b[i] = 1.0;
        }
        assert_eq!(enum_dice(&a, &b, [4, 4, 4]), 0.5);
    }

    #[test]
    fn diagonal_voxels_are_two_components() {
        let mut mask = vec![false; 27];
        mask[(0 * 3 + 0) * 3 + 0] = true;
        mask[(1 * 3 + 1) * 3 + 0] = true;
        assert_eq!(components_by_propagation(&mask, [3, 3, 3]), 2);
    }

    #[test]
    fn full_and_empty_component_counts() {
        let full = vec![true; 27];
        let empty = vec![false; 27];
        assert_eq!(components_by_propagation(&full, [3, 3, 3]), 1);
        assert_eq!(components_by_propagation(&empty, [3, 3, 3]), 0);
    }

    #[test]
    fn naive_warp_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src: Vec<f64> = (0..4 * 4 * 4).map(|_| rng.random::<f64>()).collect();
        let ident = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let out = naive_warp(&src, [4, 4, 4], &ident);
        for (o, s) in out.iter().zip(src.iter()) {
            assert!((o - s).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_volume_is_deterministic() {
        let mut a_rng = ChaCha8Rng::seed_from_u64(11);
        let mut b_rng = ChaCha8Rng::seed_from_u64(11);
        let a = smooth_random_volume([6, 6, 6], 1.5, &mut a_rng);
        let b = smooth_random_volume([6, 6, 6], 1.5, &mut b_rng);
        assert_eq!(a, b);
    }
}

// ---- runtime suites -------------------------------------------------------
//
// Seeded sweeps comparing every fast path against its reference above, plus
// autodiff-vs-finite-difference checks. These back the `verify` command and
// the acceptance gate.

use crate::geometry;
use crate::objective;
use crate::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub threshold: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst < self.threshold
    }
}

fn random_dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> [usize; 3] {
    use rand::Rng;
    [
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    ]
}

fn random_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn near_identity(rng: &mut ChaCha8Rng, magnitude: f64) -> geometry::AffineTransform {
    use rand::Rng;
    let mut params = geometry::IDENTITY_PARAMS;
    for p in params.iter_mut() {
        *p += magnitude * (rng.random::<f64>() * 2.0 - 1.0);
    }
    geometry::AffineTransform::from_params(params)
}

/// Fast convolution vs the seven-loop reference on `cases` random instances.
pub fn conv_equivalence_suite(seed: u64, cases: usize) -> SuiteResult {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 3, 8);
        let cin = rng.random_range(1..=2);
        let cout = rng.random_range(1..=3);
        let k = if rng.random::<f64>() < 0.3 { 1 } else { 3 };
        let stride = rng.random_range(1..=2);
        let padding = (k - 1) / 2;
        let x = random_values(cin * dims[0] * dims[1] * dims[2], &mut rng);
        let kernel = random_values(cout * cin * k * k * k, &mut rng);
        let bias = random_values(cout, &mut rng);
        let (expected, _) = naive_conv3d(
            &x,
            [cin, dims[0], dims[1], dims[2]],
            &kernel,
            [cout, cin, k, k, k],
            &bias,
            stride,
            padding,
        );
        let mut tape = Tape::new();
        let x_id = tape
            .leaf(x, &[cin, dims[0], dims[1], dims[2]], false)
            .unwrap();
        let k_id = tape.leaf(kernel, &[cout, cin, k, k, k], false).unwrap();
        let b_id = tape.leaf(bias, &[cout], false).unwrap();
        let out = tape.conv3d(x_id, k_id, b_id, stride, padding).unwrap();
        for (a, b) in tape.values(out).iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    SuiteResult {
        name: "conv vs naive loops",
        cases,
        worst,
        threshold: 1e-10,
    }
}

/// Fast trilinear warp vs the full-grid hat-weight sum.
pub fn warp_equivalence_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 3, 8);
        let frame = geometry::CoordinateFrame::new(dims).unwrap();
        let src = random_values(dims.iter().product(), &mut rng);
        let t = near_identity(&mut rng, 0.25);
        let fast = geometry::warp_values(&src, dims, &t, &frame);
        let reference = naive_warp(&src, dims, &geometry::to_voxel_matrix(&t, &frame));
        for (a, b) in fast.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
    }
    SuiteResult {
        name: "warp vs full-grid sum",
        cases,
        worst,
        threshold: 1e-10,
    }
}

/// Fast windowed correlation loss vs the per-voxel loops.
pub fn ncc_equivalence_suite(seed: u64, cases: usize) -> SuiteResult {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 3, 8);
        let window = [3usize, 5, 9][rng.random_range(0..3)];
        let a = random_values(dims.iter().product(), &mut rng);
        let b = random_values(dims.iter().product(), &mut rng);
        let mut tape = Tape::new();
        let a_id = tape.leaf(a.clone(), &dims, false).unwrap();
        let b_id = tape.leaf(b.clone(), &dims, false).unwrap();
        let loss = objective::ncc_loss(&mut tape, a_id, b_id, window).unwrap();
        let fast = tape.scalar_value(loss);
        let reference = naive_ncc(&a, &b, dims, window, objective::NCC_EPSILON);
        worst = worst.max((fast - reference).abs());
    }
    SuiteResult {
        name: "ncc vs windowed loops",
        cases,
        worst,
        threshold: 1e-10,
    }
}

/// Fast smoothness regularizer vs the triple loop.
pub fn smoothness_equivalence_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dims = random_dims(&mut rng, 3, 8);
        let mask = random_values(dims.iter().product(), &mut rng);
        let mut tape = Tape::new();
        let m = tape.leaf(mask.clone(), &dims, false).unwrap();
        let r = objective::mask_smoothness(&mut tape, m).unwrap();
        let fast = tape.scalar_value(r);
        let reference = naive_smoothness(&mask, dims);
        worst = worst.max((fast - reference).abs());
    }
    SuiteResult {
        name: "smoothness vs triple loop",
        cases,
        worst,
        threshold: 1e-10,
    }
}

/// Autodiff through a composite graph vs central finite differences.
pub fn autodiff_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let dims = [4usize, 4, 4];
        let x = random_values(64, &mut rng);
        let other = random_values(64, &mut rng);
        let gamma = 2.0 + (case % 5) as f64;
        let build = |tape: &mut Tape, x_values: &[f64], grad: bool| {
            let x_id = tape.leaf(x_values.to_vec(), &dims, grad).unwrap();
            let o_id = tape.leaf(other.clone(), &dims, false).unwrap();
            let prod = tape.mul(x_id, o_id).unwrap();
            let sig = tape.steep_sigmoid(prod, gamma).unwrap();
            let act = tape.leaky_relu(sig, 0.2);
            let diff = tape.sub(act, x_id).unwrap();
            let sq = tape.mul(diff, diff).unwrap();
            (x_id, tape.reduce_mean(sq))
        };
        let mut tape = Tape::new();
        let (x_id, loss) = build(&mut tape, &x, true);
        tape.backward(loss).unwrap();
        let autodiff = tape.grad(x_id).unwrap().to_vec();
        let fd = fd_gradient(
            &mut |probe: &[f64]| {
                let mut t = Tape::new();
                let (_, l) = build(&mut t, probe, false);
                t.scalar_value(l)
            },
            &x,
            1e-5,
        );
        for (a, f) in autodiff.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *f, 1e-6));
        }
    }
    SuiteResult {
        name: "autodiff vs finite differences",
        cases,
        worst,
        threshold: 1e-5,
    }
}

/// Move a transform off the trilinear kink set: central differences are
/// only meaningful when no sample coordinate sits within the probe step of
/// an integer, where the interpolant's derivative jumps.
fn nudge_off_kinks(
    mut t: geometry::AffineTransform,
    dims: [usize; 3],
    frame: &geometry::CoordinateFrame,
    clearance: f64,
) -> geometry::AffineTransform {
    'retry: for _ in 0..64 {
        let matrix = geometry::to_voxel_matrix(&t, frame);
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    let u = map_point4(&matrix, [x as f64, y as f64, z as f64]);
                    for coord in u {
                        let frac = (coord - coord.round()).abs();
                        if frac < clearance {
                            for axis in [3usize, 7, 11] {
                                t.params[axis] += 2.7 * clearance;
                            }
                            continue 'retry;
                        }
                    }
                }
            }
        }
        break;
    }
    t
}

/// Warp gradients with respect to the transform entries vs differences.
pub fn warp_gradient_suite(seed: u64, cases: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dims = [6usize, 6, 6];
        let frame = geometry::CoordinateFrame::new(dims).unwrap();
        let src = smooth_random_volume(dims, 1.5, &mut rng);
        let t = nudge_off_kinks(near_identity(&mut rng, 0.05), dims, &frame, 1e-3);
        let mut tape = Tape::new();
        let s = tape.leaf(src.clone(), &dims, false).unwrap();
        let t_id = tape.leaf(t.params.to_vec(), &[12], true).unwrap();
        let out = geometry::warp(&mut tape, s, t_id, &frame).unwrap();
        let sq = tape.mul(out, out).unwrap();
        let loss = tape.reduce_sum(sq);
        tape.backward(loss).unwrap();
        let autodiff = tape.grad(t_id).unwrap().to_vec();
        let fd = fd_gradient(
            &mut |params: &[f64]| {
                let mut probe = [0.0; 12];
                probe.copy_from_slice(params);
                let warped = geometry::warp_values(
                    &src,
                    dims,
                    &geometry::AffineTransform::from_params(probe),
                    &frame,
                );
                warped.iter().map(|v| v * v).sum()
            },
            &t.params,
            1e-5,
        );
        for (a, f) in autodiff.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *f, 1e-6));
        }
    }
    SuiteResult {
        name: "warp transform gradients",
        cases,
        worst,
        threshold: 1e-4,
    }
}

/// Pointwise mapping through composed transforms vs sequential mapping.
pub fn compose_mapping_suite(seed: u64, cases: usize) -> SuiteResult {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let a = near_identity(&mut rng, 0.4);
        let b = near_identity(&mut rng, 0.4);
        let p = [
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        ];
        let through = geometry::map_point(&geometry::compose(&a, &b), p);
        let sequential = geometry::map_point(&b, geometry::map_point(&a, p));
        for (x, y) in through.iter().zip(&sequential) {
            worst = worst.max((x - y).abs());
        }
    }
    SuiteResult {
        name: "composition vs sequential mapping",
        cases,
        worst,
        threshold: 1e-12,
    }
}

/// All oracle-equivalence and gradient suites at one seed.
pub fn run_all_suites(seed: u64) -> Vec<SuiteResult> {
    vec![
        conv_equivalence_suite(mix(seed, 1), 50),
        warp_equivalence_suite(mix(seed, 2), 50),
        ncc_equivalence_suite(mix(seed, 3), 50),
        smoothness_equivalence_suite(mix(seed, 4), 50),
        autodiff_suite(mix(seed, 5), 10),
        warp_gradient_suite(mix(seed, 6), 5),
        compose_mapping_suite(mix(seed, 7), 50),
    ]
}

fn mix(seed: u64, salt: u64) -> u64 {
    crate::data::mix_seed(seed, salt)
}
