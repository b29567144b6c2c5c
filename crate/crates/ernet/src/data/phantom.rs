//! Synthetic head phantoms with analytically known masks, labels, and
//! alignment transforms, used for desk-scale training and verification.
//!
//! The template head is an analytic function of normalized-centered
//! coordinates: a smoothly shaded ellipsoidal brain holding two interior
//! structures (the label lobes), wrapped in a darker gap and a bright skull
//! shell. A phantom source is the template evaluated through a random
//! perturbation transform (so its brain is an exact affine image of the
//! target brain) plus additive noise; the target is the unperturbed brain
//! alone. The inverse perturbation is the ground-truth alignment.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{warp_labels, AffineTransform, CoordinateFrame};
use crate::tensor::standard_normal;

use super::augment::{random_affine, AugmentationRanges};
use super::Volume;

pub const NOISE_SIGMA: f64 = 0.02;

const BRAIN_RADII: [f64; 3] = [0.78, 0.70, 0.74];
const LOBE1_CENTER: [f64; 3] = [-0.28, 0.12, 0.03];
const LOBE1_RADII: [f64; 3] = [0.32, 0.27, 0.29];
const LOBE2_CENTER: [f64; 3] = [0.32, -0.10, -0.05];
const LOBE2_RADII: [f64; 3] = [0.25, 0.22, 0.24];

/// One synthetic pair plus its ground truth.
#[derive(Debug, Clone)]
pub struct PhantomSample {
    /// Perturbed brain+skull head with additive noise.
    pub source: Volume,
    /// Unperturbed template brain (no skull, no noise).
    pub target: Volume,
    /// Binary brain mask of the source.
    pub truth_mask: Vec<f64>,
    /// Interior structure labels of the source.
    pub truth_labels: Vec<u32>,
    /// Structure labels of the target, aligned with `truth_transform`.
    pub target_labels: Vec<u32>,
    /// Transform whose warp maps the source brain onto the target.
    pub truth_transform: AffineTransform,
}

fn ellipsoid_distance(p: [f64; 3], center: [f64; 3], radii: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        let t = (p[i] - center[i]) / radii[i];
        acc += t * t;
    }
    acc.sqrt()
}

/// 1 inside, cosine rolloff over [edge, 1], 0 outside.
fn smooth_support(d: f64, edge: f64) -> f64 {
    if d <= edge {
        1.0
    } else if d >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (d - edge) / (1.0 - edge)).cos())
    }
}

fn brain_intensity(p: [f64; 3]) -> f64 {
    let d = ellipsoid_distance(p, [0.0; 3], BRAIN_RADII);
    if d >= 1.0 {
        return 0.0;
    }
    let envelope = smooth_support(d, 0.85);
    let base = 0.50 + 0.18 * (1.0 - d * d);
    // Smooth anatomical texture: the similarity loss needs structure that
    // only lines up under the true transform.
    let pi = std::f64::consts::PI;
    let ripple = 0.07 * (2.6 * pi * d).cos()
        + 0.06 * (2.1 * pi * p[0]).sin() * (1.7 * pi * p[1]).cos()
        + 0.05 * (1.9 * pi * p[2]).sin() * (1.4 * pi * p[0]).cos();
    let lobe1 = 0.22 * smooth_support(ellipsoid_distance(p, LOBE1_CENTER, LOBE1_RADII), 0.6);
    let lobe2 = -0.20 * smooth_support(ellipsoid_distance(p, LOBE2_CENTER, LOBE2_RADII), 0.6);
    (base + ripple + lobe1 + lobe2).max(0.05) * envelope
}

fn skull_intensity(p: [f64; 3]) -> f64 {
    let d = ellipsoid_distance(p, [0.0; 3], BRAIN_RADII);
    if d <= 1.04 || d >= 1.26 {
        return 0.0;
    }
    // Bright shell with soft inner and outer edges, separated from the
    // brain by a dark gap.
    let rise = ((d - 1.04) / 0.05).min(1.0);
    let fall = smooth_support((d - 1.09).max(0.0) / 0.17, 0.55);
    0.85 * rise.min(fall)
}

fn brain_support(p: [f64; 3]) -> bool {
    ellipsoid_distance(p, [0.0; 3], BRAIN_RADII) < 1.0
}

fn label_of(p: [f64; 3]) -> u32 {
    if !brain_support(p) {
        return 0;
    }
    let d1 = ellipsoid_distance(p, LOBE1_CENTER, LOBE1_RADII);
    let d2 = ellipsoid_distance(p, LOBE2_CENTER, LOBE2_RADII);
    if d1 < 1.0 && d1 <= d2 {
        1
    } else if d2 < 1.0 {
        2
    } else {
        0
    }
}

/// Deterministic synthetic pair. The perturbation is drawn from `ranges`;
/// extents of at least 32 per axis keep the structures resolvable.
pub fn make_phantom(
    seed: u64,
    extents: [usize; 3],
    ranges: &AugmentationRanges,
) -> Result<PhantomSample> {
    if extents.iter().any(|&e| e < 32) {
        return Err(Error::invalid(format!(
            "make_phantom: extents must be at least 32 per axis, got {:?}",
            extents
        )));
    }
    let frame = CoordinateFrame::new(extents)?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    // Perturbation maps source coordinates to template coordinates; its
    // inverse is what a perfect registration should predict.
    let perturbation = random_affine(ranges, &frame, &mut rng);
    let truth_transform = perturbation.inverse()?;

    let voxels: usize = extents.iter().product();
    let mut source = Vec::with_capacity(voxels);
    let mut target = Vec::with_capacity(voxels);
    let mut truth_mask = Vec::with_capacity(voxels);
    let mut truth_labels = Vec::with_capacity(voxels);
    let [w, h, d] = extents;
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let p = frame.voxel_to_normalized([x as f64, y as f64, z as f64]);
                let q = crate::geometry::map_point(&perturbation, p);
                let head = brain_intensity(q) + skull_intensity(q);
                source.push(head + NOISE_SIGMA * standard_normal(&mut rng));
                target.push(brain_intensity(p));
                truth_mask.push(if brain_support(q) { 1.0 } else { 0.0 });
                truth_labels.push(label_of(q));
            }
        }
    }
    // Target labels are the truth-warped source labels, so a perfect
    // transform scores exactly 1; independently discretizing both sides
    // would cap the score by nearest-neighbor boundary noise instead.
    let target_labels = warp_labels(&truth_labels, extents, &truth_transform, &frame);
    Ok(PhantomSample {
        source: Volume::new(extents, source)?,
        target: Volume::new(extents, target)?,
        truth_mask,
        truth_labels,
        target_labels,
        truth_transform,
    })
}
