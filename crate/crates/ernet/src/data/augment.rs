//! Random affine augmentation within declared ranges.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{compose, warp_labels, warp_values, AffineTransform, CoordinateFrame};

use super::phantom::PhantomSample;

/// Bounds for the sampled transforms: per-axis translation in voxels,
/// per-axis Euler rotation in degrees, isotropic scale interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRanges {
    pub translation_voxels: f64,
    pub rotation_degrees: f64,
    pub scale: (f64, f64),
}

impl AugmentationRanges {
    pub fn none() -> Self {
        AugmentationRanges {
            translation_voxels: 0.0,
            rotation_degrees: 0.0,
            scale: (1.0, 1.0),
        }
    }
}

impl Default for AugmentationRanges {
    /// Mild ranges suitable for ~96-voxel head volumes.
    fn default() -> Self {
        AugmentationRanges {
            translation_voxels: 5.0,
            rotation_degrees: 5.0,
            scale: (0.98, 1.02),
        }
    }
}

/// Sample a transform uniformly within the ranges: isotropic scale and
/// Euler rotations act about the volume center, then the translation is
/// added, all in the normalized-centered frame of `frame`. The translation
/// entries of the result stay inside the declared voxel bound.
pub fn random_affine(
    ranges: &AugmentationRanges,
    frame: &CoordinateFrame,
    rng: &mut impl Rng,
) -> AffineTransform {
    fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            lo + (hi - lo) * rng.random::<f64>()
        } else {
            lo
        }
    }
    let deg = ranges.rotation_degrees;
    let rotation = AffineTransform::rotation_euler(
        uniform(rng, -deg, deg).to_radians(),
        uniform(rng, -deg, deg).to_radians(),
        uniform(rng, -deg, deg).to_radians(),
    );
    let scale = AffineTransform::scaling(uniform(rng, ranges.scale.0, ranges.scale.1));
    let (axis_scale, _) = frame.axis_maps();
    let mut translation = [0.0; 3];
    for (axis, slot) in translation.iter_mut().enumerate() {
        let voxels = uniform(rng, -ranges.translation_voxels, ranges.translation_voxels);
        *slot = voxels * axis_scale[axis];
    }
    // Scale, then rotate, then translate: the translation entries of the
    // composed matrix are exactly the sampled offsets.
    compose(&compose(&scale, &rotation), &AffineTransform::translation(translation))
}

/// Apply an augmentation transform to a sample: the source image is warped,
/// its mask and labels follow with nearest-neighbor sampling, and the truth
/// transform is updated so the augmented source still aligns to the target.
pub fn augment_sample(sample: &PhantomSample, u: &AffineTransform) -> PhantomSample {
    let dims = sample.source.dims;
    let frame = sample.source.frame();
    let mut source = sample.source.clone();
    source.values = warp_values(&sample.source.values, dims, u, &frame);
    let mask_labels: Vec<u32> = sample.truth_mask.iter().map(|&v| v as u32).collect();
    let truth_mask: Vec<f64> = warp_labels(&mask_labels, dims, u, &frame)
        .into_iter()
        .map(f64::from)
        .collect();
    let truth_labels = warp_labels(&sample.truth_labels, dims, u, &frame);
    // New source samples the old at u, so aligning it applies the old truth
    // first and then u^-1.
    let inv = u.inverse().expect("augmentation transforms are invertible");
    let truth_transform = compose(&sample.truth_transform, &inv);
    PhantomSample {
        source,
        target: sample.target.clone(),
        truth_mask,
        truth_labels,
        target_labels: sample.target_labels.clone(),
        truth_transform,
    }
}
