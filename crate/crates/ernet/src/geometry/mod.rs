//! Affine transforms in homogeneous coordinates and the spatial
//! transformation layer (backward warping with trilinear interpolation).
//!
//! Transforms are stored as the 12 row-major entries of the top three rows
//! of a 4x4 homogeneous matrix. The engine works in normalized-centered
//! coordinates: each axis of a volume maps to [-1, 1] with the volume center
//! at the origin, so predicted rotations and scales act about the center.
//! [`to_voxel_matrix`] recovers the raw voxel-index form by conjugation.

mod warp;

pub use warp::{compose_on_tape, trilinear_warp_values, warp, warp_labels, warp_values};

use crate::error::{Error, Result};

pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY_PARAMS: [f64; 12] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// 12-parameter affine transform; `matrix()` has last row (0, 0, 0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub params: [f64; 12],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            params: IDENTITY_PARAMS,
        }
    }

    pub fn from_params(params: [f64; 12]) -> Self {
        AffineTransform { params }
    }

    /// Top three rows of `m`; the last row is assumed homogeneous.
    pub fn from_matrix(m: &Mat4) -> Self {
        let mut params = [0.0; 12];
        for r in 0..3 {
            params[4 * r..4 * r + 4].copy_from_slice(&m[r]);
        }
        AffineTransform { params }
    }

    pub fn matrix(&self) -> Mat4 {
        let p = &self.params;
        [
            [p[0], p[1], p[2], p[3]],
            [p[4], p[5], p[6], p[7]],
            [p[8], p[9], p[10], p[11]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut out = Self::identity();
        out.params[3] = t[0];
        out.params[7] = t[1];
        out.params[11] = t[2];
        out
    }

    pub fn scaling(s: f64) -> Self {
        let mut out = Self::identity();
        out.params[0] = s;
        out.params[5] = s;
        out.params[10] = s;
        out
    }

    /// Rotation from Euler angles in radians, applied as x then y then z.
    pub fn rotation_euler(rx: f64, ry: f64, rz: f64) -> Self {
        let (sx, cx) = rx.sin_cos();
        let (sy, cy) = ry.sin_cos();
        let (sz, cz) = rz.sin_cos();
        let rx_m = [
            [1.0, 0.0, 0.0],
            [0.0, cx, -sx],
            [0.0, sx, cx],
        ];
        let ry_m = [
            [cy, 0.0, sy],
            [0.0, 1.0, 0.0],
            [-sy, 0.0, cy],
        ];
        let rz_m = [
            [cz, -sz, 0.0],
            [sz, cz, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let mul3 = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
            let mut out = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    for k in 0..3 {
                        out[r][c] += a[r][k] * b[k][c];
                    }
                }
            }
            out
        };
        let rot = mul3(&rz_m, &mul3(&ry_m, &rx_m));
        let mut out = Self::identity();
        for r in 0..3 {
            for c in 0..3 {
                out.params[4 * r + c] = rot[r][c];
            }
        }
        out
    }

    /// Inverse of the affine map; errors when the linear part is singular.
    pub fn inverse(&self) -> Result<Self> {
        let m = self.matrix();
        let a = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        if det.abs() < 1e-12 {
            return Err(Error::invalid("transform inverse: singular linear part"));
        }
        let inv_det = 1.0 / det;
        let mut inv = [[0.0; 3]; 3];
        inv[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv_det;
        inv[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv_det;
        inv[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv_det;
        inv[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv_det;
        inv[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv_det;
        inv[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv_det;
        inv[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv_det;
        inv[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv_det;
        inv[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv_det;
        let t = [m[0][3], m[1][3], m[2][3]];
        let mut params = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                params[4 * r + c] = inv[r][c];
            }
            params[4 * r + 3] = -(inv[r][0] * t[0] + inv[r][1] * t[1] + inv[r][2] * t[2]);
        }
        Ok(AffineTransform { params })
    }
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            for k in 0..4 {
                out[r][c] += a[r][k] * b[k][c];
            }
        }
    }
    out
}

/// `compose(inner, outer)` maps a point through `inner` first, then `outer`:
/// the result matrix is `outer.matrix() * inner.matrix()`.
pub fn compose(inner: &AffineTransform, outer: &AffineTransform) -> AffineTransform {
    AffineTransform::from_matrix(&mat4_mul(&outer.matrix(), &inner.matrix()))
}

/// Homogeneous multiply, dropping the trailing 1.
pub fn map_point(t: &AffineTransform, p: [f64; 3]) -> [f64; 3] {
    let m = t.matrix();
    let mut out = [0.0; 3];
    for (r, row) in m.iter().take(3).enumerate() {
        out[r] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3];
    }
    out
}

/// Volume extents plus the normalized-centered coordinate convention:
/// voxel centers sit at integer coordinates `0..n-1`, and each axis maps
/// `0 -> -1`, `n-1 -> +1`. Degenerate axes of extent 1 map `0 -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordinateFrame {
    pub extents: [usize; 3],
}

impl CoordinateFrame {
    pub fn new(extents: [usize; 3]) -> Result<Self> {
        if extents.contains(&0) {
            return Err(Error::invalid("coordinate frame: extents must be positive"));
        }
        Ok(CoordinateFrame { extents })
    }

    /// Per-axis scale and offset of the voxel-to-normalized map.
    pub(crate) fn axis_maps(&self) -> ([f64; 3], [f64; 3]) {
        let mut scale = [1.0; 3];
        let mut offset = [0.0; 3];
        for i in 0..3 {
            if self.extents[i] > 1 {
                scale[i] = 2.0 / (self.extents[i] - 1) as f64;
                offset[i] = -1.0;
            }
        }
        (scale, offset)
    }

    /// Voxel index coordinates to normalized-centered coordinates.
    pub fn norm_matrix(&self) -> Mat4 {
        let (s, c) = self.axis_maps();
        [
            [s[0], 0.0, 0.0, c[0]],
            [0.0, s[1], 0.0, c[1]],
            [0.0, 0.0, s[2], c[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn inv_norm_matrix(&self) -> Mat4 {
        let (s, c) = self.axis_maps();
        [
            [1.0 / s[0], 0.0, 0.0, -c[0] / s[0]],
            [0.0, 1.0 / s[1], 0.0, -c[1] / s[1]],
            [0.0, 0.0, 1.0 / s[2], -c[2] / s[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn voxel_to_normalized(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.axis_maps();
        [s[0] * p[0] + c[0], s[1] * p[1] + c[1], s[2] * p[2] + c[2]]
    }

    pub fn normalized_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.axis_maps();
        [(p[0] - c[0]) / s[0], (p[1] - c[1]) / s[1], (p[2] - c[2]) / s[2]]
    }
}

/// Raw voxel-index form of a normalized-centered transform: `N^-1 * A * N`.
pub fn to_voxel_matrix(t: &AffineTransform, frame: &CoordinateFrame) -> Mat4 {
    mat4_mul(
        &frame.inv_norm_matrix(),
        &mat4_mul(&t.matrix(), &frame.norm_matrix()),
    )
}

/// Inverse conversion of [`to_voxel_matrix`]: `A = N * V * N^-1`.
pub fn from_voxel_matrix(v: &Mat4, frame: &CoordinateFrame) -> AffineTransform {
    AffineTransform::from_matrix(&mat4_mul(
        &frame.norm_matrix(),
        &mat4_mul(v, &frame.inv_norm_matrix()),
    ))
}

/// On-disk convention of a 12-value transform file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformConvention {
    NormalizedCentered,
    Voxel,
}

impl TransformConvention {
    fn header(&self) -> &'static str {
        match self {
            TransformConvention::NormalizedCentered => "convention: normalized-centered",
            TransformConvention::Voxel => "convention: voxel",
        }
    }
}

/// Transform text format: a header line naming the coordinate convention,
/// then 12 decimal values, row-major, on one line.
pub fn write_transform_file(
    path: &std::path::Path,
    params: &[f64; 12],
    convention: TransformConvention,
) -> Result<()> {
    let values: Vec<String> = params.iter().map(|v| format!("{v:.17e}")).collect();
    let body = format!("{}\n{}\n", convention.header(), values.join(" "));
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_transform_file(path: &std::path::Path) -> Result<(TransformConvention, [f64; 12])> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{}: empty transform file", path.display())))?;
    let convention = if header.contains("normalized-centered") {
        TransformConvention::NormalizedCentered
    } else if header.contains("voxel") {
        TransformConvention::Voxel
    } else {
        return Err(Error::invalid(format!(
            "{}: header must name the coordinate convention, got '{header}'",
            path.display()
        )));
    };
    let row = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{}: missing value row", path.display())))?;
    let parsed: std::result::Result<Vec<f64>, _> =
        row.split_whitespace().map(str::parse::<f64>).collect();
    let values =
        parsed.map_err(|e| Error::invalid(format!("{}: bad value: {e}", path.display())))?;
    if values.len() != 12 {
        return Err(Error::invalid(format!(
            "{}: expected 12 values, got {}",
            path.display(),
            values.len()
        )));
    }
    let mut params = [0.0; 12];
    params.copy_from_slice(&values);
    Ok((convention, params))
}

/// Read a transform file and express it in normalized-centered coordinates,
/// converting from the voxel convention when necessary.
pub fn read_transform_as_normalized(
    path: &std::path::Path,
    frame: &CoordinateFrame,
) -> Result<AffineTransform> {
    let (convention, params) = read_transform_file(path)?;
    Ok(match convention {
        TransformConvention::NormalizedCentered => AffineTransform::from_params(params),
        TransformConvention::Voxel => {
            let v = AffineTransform::from_params(params).matrix();
            from_voxel_matrix(&v, frame)
        }
    })
}
