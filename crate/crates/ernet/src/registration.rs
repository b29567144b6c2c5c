//! Shared-weight multi-stage registration: a strided 3D conv encoder
//! predicts an incremental affine per stage, the composition layer folds it
//! into the running transform, and the spatial transformation layer warps
//! the extracted image once per stage, always from the same source.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{compose_on_tape, warp, CoordinateFrame, IDENTITY_PARAMS};
use crate::layers::{
    bind_conv, bind_dense, conv_forward, BoundLayer, Conv3dLayer, DenseLayer, LEAKY_SLOPE,
};
use crate::tensor::{Param, Tape, TensorId};

/// Default encoder widths; every conv runs at stride 2.
pub const DEFAULT_REGISTRATION_WIDTHS: [usize; 6] = [16, 32, 64, 128, 256, 512];
pub const DEFAULT_REGISTRATION_HIDDEN: usize = 128;

/// Encoder over the 2-channel concatenation of the current warped image and
/// the target, followed by global average pooling and two dense layers. The
/// final layer starts at zero, so the predicted transform is exactly the
/// identity plus a learned residual.
#[derive(Debug, Clone)]
pub struct RegistrationNet {
    pub widths: Vec<usize>,
    pub hidden: usize,
    convs: Vec<Conv3dLayer>,
    dense_hidden: DenseLayer,
    dense_out: DenseLayer,
}

impl RegistrationNet {
    pub fn new(widths: &[usize], hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() != 6 || widths.contains(&0) || hidden == 0 {
            return Err(Error::invalid(format!(
                "registration net: expected 6 positive conv widths and a hidden size, got {:?} / {hidden}",
                widths
            )));
        }
        let mut inputs = vec![2usize];
        inputs.extend_from_slice(&widths[..5]);
        let convs = (0..6)
            .map(|i| {
                Conv3dLayer::new(&format!("registration.conv{i}"), inputs[i], widths[i], 3, 2, rng)
            })
            .collect();
        Ok(RegistrationNet {
            widths: widths.to_vec(),
            hidden,
            convs,
            dense_hidden: DenseLayer::new("registration.dense0", widths[5], hidden, rng),
            dense_out: DenseLayer::zeroed("registration.dense1", hidden, 12),
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::with_capacity(16);
        for layer in &self.convs {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.dense_hidden.weight);
        out.push(&self.dense_hidden.bias);
        out.push(&self.dense_out.weight);
        out.push(&self.dense_out.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(16);
        for layer in &mut self.convs {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.dense_hidden.weight);
        out.push(&mut self.dense_hidden.bias);
        out.push(&mut self.dense_out.weight);
        out.push(&mut self.dense_out.bias);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundRegistrationNet {
        BoundRegistrationNet {
            convs: self.convs.iter().map(|l| bind_conv(tape, l)).collect(),
            dense_hidden: bind_dense(tape, &self.dense_hidden),
            dense_out: bind_dense(tape, &self.dense_out),
        }
    }

    /// Predict the incremental transform between the previous warped image
    /// and the target: 12 values in normalized-centered coordinates,
    /// parameterized as identity plus residual.
    pub fn predict_increment(
        &self,
        tape: &mut Tape,
        bound: &BoundRegistrationNet,
        w_prev: TensorId,
        target: TensorId,
    ) -> Result<TensorId> {
        let dims = tape.shape(w_prev).to_vec();
        if dims != tape.shape(target) {
            return Err(Error::ShapeMismatch {
                op: "predict_increment",
                lhs: dims,
                rhs: tape.shape(target).to_vec(),
            });
        }
        if dims.len() != 3 {
            return Err(Error::invalid(format!(
                "registration: expected [w,h,d] volumes, got {:?}",
                dims
            )));
        }
        let a = tape.reshape(w_prev, &[1, dims[0], dims[1], dims[2]])?;
        let b = tape.reshape(target, &[1, dims[0], dims[1], dims[2]])?;
        let mut x = tape.concat_channels(a, b)?;
        for (layer, ids) in self.convs.iter().zip(&bound.convs) {
            let y = conv_forward(tape, layer, *ids, x)?;
            x = tape.leaky_relu(y, LEAKY_SLOPE);
        }
        let pooled = tape.global_avg_pool(x)?;
        let h = tape.dense(pooled, bound.dense_hidden.weight, bound.dense_hidden.bias)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let residual = tape.dense(h, bound.dense_out.weight, bound.dense_out.bias)?;
        let identity = tape.constant(IDENTITY_PARAMS.to_vec(), &[12])?;
        tape.add(identity, residual)
    }
}

#[derive(Debug, Clone)]
pub struct BoundRegistrationNet {
    convs: Vec<BoundLayer>,
    dense_hidden: BoundLayer,
    dense_out: BoundLayer,
}

impl BoundRegistrationNet {
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::with_capacity(16);
        for layer in &self.convs {
            out.push(layer.weight);
            out.push(layer.bias);
        }
        out.push(self.dense_hidden.weight);
        out.push(self.dense_hidden.bias);
        out.push(self.dense_out.weight);
        out.push(self.dense_out.bias);
        out
    }
}

/// Per-stage transforms and warps. `combined_ids[0]` is the identity and
/// `warped_ids[0]` the extracted image; every later warp resamples that
/// same image exactly once.
#[derive(Debug, Clone)]
pub struct RegistrationTrace {
    pub increment_ids: Vec<TensorId>,
    pub combined_ids: Vec<TensorId>,
    pub warped_ids: Vec<TensorId>,
}

impl RegistrationTrace {
    pub fn final_warp(&self) -> TensorId {
        *self.warped_ids.last().expect("at least the input image")
    }

    pub fn final_transform(&self) -> TensorId {
        *self.combined_ids.last().expect("at least the identity")
    }
}

/// Generic stage loop over any increment producer; the network path and the
/// oracle tests share it.
pub fn run_registration_with(
    tape: &mut Tape,
    mut predict: impl FnMut(&mut Tape, TensorId, TensorId) -> Result<TensorId>,
    extracted: TensorId,
    target: TensorId,
    stages: usize,
    frame: &CoordinateFrame,
) -> Result<RegistrationTrace> {
    if stages == 0 {
        return Err(Error::invalid(
            "registration: stage count must be at least 1 (disabling the module is a pipeline-level configuration)",
        ));
    }
    let identity = tape.constant(IDENTITY_PARAMS.to_vec(), &[12])?;
    let mut trace = RegistrationTrace {
        increment_ids: Vec::with_capacity(stages),
        combined_ids: vec![identity],
        warped_ids: vec![extracted],
    };
    for _ in 0..stages {
        let previous_warp = *trace.warped_ids.last().unwrap();
        let previous_combined = *trace.combined_ids.last().unwrap();
        let increment = predict(tape, previous_warp, target)?;
        let combined = compose_on_tape(tape, previous_combined, increment)?;
        // Always resample the extracted image, never the previous warp.
        let warped = warp(tape, extracted, combined, frame)?;
        trace.increment_ids.push(increment);
        trace.combined_ids.push(combined);
        trace.warped_ids.push(warped);
    }
    Ok(trace)
}

/// Multi-stage registration with shared weights.
pub fn run_registration(
    tape: &mut Tape,
    net: &RegistrationNet,
    bound: &BoundRegistrationNet,
    extracted: TensorId,
    target: TensorId,
    stages: usize,
    frame: &CoordinateFrame,
) -> Result<RegistrationTrace> {
    run_registration_with(
        tape,
        |tape, w_prev, t| net.predict_increment(tape, bound, w_prev, t),
        extracted,
        target,
        stages,
        frame,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_phantom, normalize_minmax, AugmentationRanges};
    use crate::geometry::{compose, AffineTransform};
    use crate::objective::{label_dice, mean_gradient_magnitude};
    use crate::refcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(rng: &mut impl Rng) -> RegistrationNet {
        RegistrationNet::new(&[2, 4, 8, 16, 32, 64], 16, rng).unwrap()
    }

    fn random_volume(dims: [usize; 3], rng: &mut impl Rng) -> Vec<f64> {
        (0..dims.iter().product()).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn zero_initialized_head_predicts_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let net = tiny_net(&mut rng);
        let dims = [16, 16, 16];
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let a = tape.leaf(random_volume(dims, &mut rng), &dims, false).unwrap();
        let b = tape.leaf(random_volume(dims, &mut rng), &dims, false).unwrap();
        let inc = net.predict_increment(&mut tape, &bound, a, b).unwrap();
        assert_eq!(tape.values(inc), &IDENTITY_PARAMS[..]);
    }

    #[test]
    fn increment_is_finite_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let mut net = tiny_net(&mut rng);
        net.dense_out = DenseLayer::new("registration.dense1", 16, 12, &mut rng);
        let dims = [12, 8, 8];
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let a = tape.leaf(random_volume(dims, &mut rng), &dims, false).unwrap();
        let b = tape.leaf(random_volume(dims, &mut rng), &dims, false).unwrap();
        let inc = net.predict_increment(&mut tape, &bound, a, b).unwrap();
        assert!(tape.values(inc).iter().all(|v| v.is_finite()));

        let c = tape.leaf(vec![0.0; 512], &[8, 8, 8], false).unwrap();
        assert!(net.predict_increment(&mut tape, &bound, a, c).is_err());
    }

    #[test]
    fn single_stage_identity_net_returns_input_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let net = tiny_net(&mut rng);
        let dims = [8, 8, 8];
        let frame = CoordinateFrame::new(dims).unwrap();
        let volume = random_volume(dims, &mut rng);
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let e = tape.leaf(volume.clone(), &dims, false).unwrap();
        let t = tape.leaf(random_volume(dims, &mut rng), &dims, false).unwrap();
        let trace = run_registration(&mut tape, &net, &bound, e, t, 1, &frame).unwrap();
        assert_eq!(tape.values(trace.final_warp()), &volume[..]);
        assert_eq!(tape.values(trace.final_transform()), &IDENTITY_PARAMS[..]);
    }

    #[test]
    fn zero_stages_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let net = tiny_net(&mut rng);
        let dims = [8, 8, 8];
        let frame = CoordinateFrame::new(dims).unwrap();
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let e = tape.leaf(vec![0.0; 512], &dims, false).unwrap();
        let t = tape.leaf(vec![0.0; 512], &dims, false).unwrap();
        assert!(run_registration(&mut tape, &net, &bound, e, t, 0, &frame).is_err());
    }

    #[test]
    fn oracle_increment_aligns_phantom() {
        let ranges = AugmentationRanges {
            translation_voxels: 3.0,
            rotation_degrees: 8.0,
            scale: (0.95, 1.05),
        };
        let sample = make_phantom(90, [32, 32, 32], &ranges).unwrap();
        let dims = sample.source.dims;
        let frame = sample.source.frame();
        let source = normalize_minmax(&sample.source);
        let truth = sample.truth_transform;

        let mut tape = Tape::new();
        let e = tape.leaf(source.values.clone(), &dims, false).unwrap();
        let t = tape.leaf(sample.target.values.clone(), &dims, false).unwrap();
        let trace = run_registration_with(
            &mut tape,
            |tape, _, _| tape.constant(truth.params.to_vec(), &[12]),
            e,
            t,
            1,
            &frame,
        )
        .unwrap();
        let predicted = AffineTransform::from_params(
            tape.values(trace.final_transform()).try_into().unwrap(),
        );
        let warped_labels =
            crate::geometry::warp_labels(&sample.truth_labels, dims, &predicted, &frame);
        let (dice, _) = label_dice(&warped_labels, &sample.target_labels);
        assert!(dice >= 0.99, "dice {dice}");
    }

    #[test]
    fn combined_transform_is_ordered_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let dims = [8, 8, 8];
        let frame = CoordinateFrame::new(dims).unwrap();
        let increments: Vec<AffineTransform> = (0..4)
            .map(|_| {
                let mut params = IDENTITY_PARAMS;
                for p in params.iter_mut() {
                    *p += 0.05 * (rng.random::<f64>() - 0.5);
                }
                AffineTransform::from_params(params)
            })
            .collect();
        let mut tape = Tape::new();
        let e = tape.leaf(random_volume(dims, &mut rng), &dims, false).unwrap();
        let t = tape.leaf(random_volume(dims, &mut rng), &dims, false).unwrap();
        let mut stage = 0usize;
        let incs = increments.clone();
        let trace = run_registration_with(
            &mut tape,
            move |tape, _, _| {
                let id = tape.constant(incs[stage].params.to_vec(), &[12]);
                stage += 1;
                id
            },
            e,
            t,
            4,
            &frame,
        )
        .unwrap();

        let mut expected = AffineTransform::identity();
        for inc in &increments {
            expected = compose(&expected, inc);
        }
        for (a, b) in tape
            .values(trace.final_transform())
            .iter()
            .zip(&expected.params)
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn composition_chain_is_associative_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let make = |rng: &mut ChaCha8Rng| {
            let mut params = IDENTITY_PARAMS;
            for p in params.iter_mut() {
                *p += 0.2 * (rng.random::<f64>() - 0.5);
            }
            AffineTransform::from_params(params)
        };
        let (a1, a2, a3) = (make(&mut rng), make(&mut rng), make(&mut rng));
        let left = compose(&compose(&a1, &a2), &a3);
        let product = crate::geometry::mat4_mul(
            &a3.matrix(),
            &crate::geometry::mat4_mul(&a2.matrix(), &a1.matrix()),
        );
        let p = [0.3, -0.7, 0.2];
        let via_compose = crate::geometry::map_point(&left, p);
        let via_product =
            crate::geometry::map_point(&AffineTransform::from_matrix(&product), p);
        for (x, y) in via_compose.iter().zip(&via_product) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn single_interpolation_keeps_warps_sharper() {
        let ranges = AugmentationRanges {
            translation_voxels: 2.0,
            rotation_degrees: 5.0,
            scale: (0.97, 1.03),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(86);
        let mut composed_total = 0.0;
        let mut sequential_total = 0.0;
        for seed in 0..5u64 {
            let sample = make_phantom(seed, [32, 32, 32], &ranges).unwrap();
            let dims = sample.target.dims;
            let frame = sample.target.frame();
            let increments: Vec<AffineTransform> = (0..5)
                .map(|_| {
                    crate::data::random_affine(
                        &AugmentationRanges {
                            translation_voxels: 1.0,
                            rotation_degrees: 3.0,
                            scale: (0.98, 1.02),
                        },
                        &frame,
                        &mut rng,
                    )
                })
                .collect();
            let mut combined = AffineTransform::identity();
            for inc in &increments {
                combined = compose(&combined, inc);
            }
            let composed =
                crate::geometry::warp_values(&sample.target.values, dims, &combined, &frame);
            // Sequential control realizes the same net transform through
            // one resampling per stage.
            let mut sequential = sample.target.values.clone();
            for inc in increments.iter().rev() {
                sequential = crate::geometry::warp_values(&sequential, dims, inc, &frame);
            }
            composed_total += mean_gradient_magnitude(&composed, dims);
            sequential_total += mean_gradient_magnitude(&sequential, dims);
        }
        assert!(
            composed_total >= sequential_total,
            "composed {composed_total} vs sequential {sequential_total}"
        );
    }

    #[test]
    fn parameter_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(87);
        let net = tiny_net(&mut rng);
        let dims = [16, 16, 16];
        let w_prev = random_volume(dims, &mut rng);
        let target = random_volume(dims, &mut rng);
        let weights: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();

        let loss_of = |net: &RegistrationNet| -> f64 {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let a = tape.leaf(w_prev.clone(), &dims, false).unwrap();
            let b = tape.leaf(target.clone(), &dims, false).unwrap();
            let inc = net.predict_increment(&mut tape, &bound, a, b).unwrap();
            tape.values(inc)
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum()
        };

        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let ids = bound.param_ids();
        let a = tape.leaf(w_prev.clone(), &dims, false).unwrap();
        let b = tape.leaf(target.clone(), &dims, false).unwrap();
        let inc = net.predict_increment(&mut tape, &bound, a, b).unwrap();
        let w_id = tape.constant(weights.clone(), &[12]).unwrap();
        let prod = tape.mul(inc, w_id).unwrap();
        let loss = tape.reduce_sum(prod);
        tape.backward(loss).unwrap();

        let mut probe_rng = ChaCha8Rng::seed_from_u64(88);
        for (pi, id) in ids.iter().enumerate() {
            let Some(grad) = tape.grad(*id) else {
                continue;
            };
            let grad = grad.to_vec();
            let numel = grad.len();
            for _ in 0..2.min(numel) {
                let j = probe_rng.random_range(0..numel);
                let h = 1e-5;
                let mut plus = net.clone();
                plus.params_mut()[pi].values[j] += h;
                let mut minus = net.clone();
                minus.params_mut()[pi].values[j] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let err = refcheck::rel_err(grad[j], fd, 1e-4);
                assert!(err < 1e-3, "param {pi} elem {j}: {} vs {fd}", grad[j]);
            }
        }
    }
}
