use super::*;
use crate::refcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_values(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// FD-check the gradient of `loss(tape, x_id)` with respect to `x`.
/// Rebuilds the graph per probe; `h = 1e-4 * scale`.
fn check_gradient(
    shape: &[usize],
    x: &[f64],
    build: &dyn Fn(&mut Tape, TensorId) -> TensorId,
    tol: f64,
) {
    let mut tape = Tape::new();
    let x_id = tape.leaf(x.to_vec(), shape, true).unwrap();
    let root = build(&mut tape, x_id);
    tape.backward(root).unwrap();
    let autodiff = tape.grad(x_id).expect("gradient populated").to_vec();

    let scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let h = 1e-4 * scale;
    let fd = refcheck::fd_gradient(
        &mut |probe: &[f64]| {
            let mut t = Tape::new();
            let id = t.leaf(probe.to_vec(), shape, false).unwrap();
            let r = build(&mut t, id);
            t.scalar_value(r)
        },
        x,
        h,
    );
    for (i, (a, f)) in autodiff.iter().zip(&fd).enumerate() {
        let err = refcheck::rel_err(*a, *f, 1e-6);
        assert!(err < tol, "element {i}: autodiff {a} vs fd {f} (rel err {err})");
    }
}

#[test]
fn product_with_ones_and_zeros() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_values(24, &mut rng);
    let mut tape = Tape::new();
    let x_id = tape.leaf(x.clone(), &[2, 3, 4], false).unwrap();
    let ones = tape.constant(vec![1.0; 24], &[2, 3, 4]).unwrap();
    let zeros = tape.constant(vec![0.0; 24], &[2, 3, 4]).unwrap();
    let with_ones = tape.mul(x_id, ones).unwrap();
    let with_zeros = tape.mul(x_id, zeros).unwrap();
    assert_eq!(tape.values(with_ones), &x[..]);
    assert!(tape.values(with_zeros).iter().all(|&v| v == 0.0));
}

#[test]
fn elementwise_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![0.0; 8], &[2, 4]).unwrap();
    let b = tape.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let msg = tape.mul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 4]") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn product_gradient_matches_other_operand_and_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_values(24, &mut rng);
    let y = random_values(24, &mut rng);

    let mut tape = Tape::new();
    let x_id = tape.leaf(x.clone(), &[2, 3, 4], true).unwrap();
    let y_id = tape.leaf(y.clone(), &[2, 3, 4], true).unwrap();
    let prod = tape.mul(x_id, y_id).unwrap();
    let loss = tape.reduce_sum(prod);
    tape.backward(loss).unwrap();
    let gx = tape.grad(x_id).unwrap();
    for (g, yv) in gx.iter().zip(&y) {
        assert!((g - yv).abs() < 1e-12);
    }

    let y_for_fd = y.clone();
    check_gradient(
        &[2, 3, 4],
        &x,
        &move |tape, x_id| {
            let y_id = tape.constant(y_for_fd.clone(), &[2, 3, 4]).unwrap();
            let prod = tape.mul(x_id, y_id).unwrap();
            tape.reduce_sum(prod)
        },
        1e-6,
    );
}

#[test]
fn scalar_broadcast_and_max_subgradient() {
    let mut tape = Tape::new();
    let a = tape.leaf(vec![-1.0, 0.5, 2.0], &[3], true).unwrap();
    let shifted = tape.add_scalar(a, 1.5);
    assert_eq!(tape.values(shifted), &[0.5, 2.0, 3.5]);
    let clamped = tape.elementwise_scalar(EwKind::Max, a, 0.0);
    assert_eq!(tape.values(clamped), &[0.0, 0.5, 2.0]);
    let loss = tape.reduce_sum(clamped);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[0.0, 1.0, 1.0]);
}

#[test]
fn conv_1x1_unit_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_values(27, &mut rng);
    let mut tape = Tape::new();
    let x_id = tape.leaf(x.clone(), &[1, 3, 3, 3], false).unwrap();
    let k = tape.constant(vec![1.0], &[1, 1, 1, 1, 1]).unwrap();
    let b = tape.constant(vec![0.0], &[1]).unwrap();
    let out = tape.conv3d(x_id, k, b, 1, 0).unwrap();
    assert_eq!(tape.values(out), &x[..]);
}

#[test]
fn conv_zero_input_zero_bias_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let x = tape.constant(vec![0.0; 2 * 64], &[2, 4, 4, 4]).unwrap();
    let k = tape
        .constant(random_values(3 * 2 * 27, &mut rng), &[3, 2, 3, 3, 3])
        .unwrap();
    let b = tape.constant(vec![0.0; 3], &[3]).unwrap();
    let out = tape.conv3d(x, k, b, 1, 1).unwrap();
    assert!(tape.values(out).iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(stride, padding) in &[(1usize, 1usize), (2, 1), (1, 0)] {
        let x = random_values(2 * 125, &mut rng);
        let k = random_values(3 * 2 * 27, &mut rng);
        let bias = random_values(3, &mut rng);
        let (expected, eshape) =
            refcheck::naive_conv3d(&x, [2, 5, 5, 5], &k, [3, 2, 3, 3, 3], &bias, stride, padding);
        let mut tape = Tape::new();
        let x_id = tape.leaf(x, &[2, 5, 5, 5], false).unwrap();
        let k_id = tape.leaf(k, &[3, 2, 3, 3, 3], false).unwrap();
        let b_id = tape.leaf(bias, &[3], false).unwrap();
        let out = tape.conv3d(x_id, k_id, b_id, stride, padding).unwrap();
        assert_eq!(tape.shape(out), &eshape[..]);
        for (a, e) in tape.values(out).iter().zip(&expected) {
            assert!((a - e).abs() < 1e-10, "stride {stride} pad {padding}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_channel_mismatch_is_reported() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![0.0; 2 * 27], &[2, 3, 3, 3]).unwrap();
    let k = tape.constant(vec![0.0; 4 * 3 * 27], &[4, 3, 3, 3, 3]).unwrap();
    let b = tape.constant(vec![0.0; 4], &[4]).unwrap();
    let msg = tape.conv3d(x, k, b, 1, 1).unwrap_err().to_string();
    assert!(msg.contains("expected 3 channels, got 2"), "{msg}");
}

#[test]
fn conv_gradients_match_fd_for_all_three_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_values(2 * 27, &mut rng);
    let k = random_values(2 * 2 * 27, &mut rng);
    let bias = random_values(2, &mut rng);

    for &(stride, probe) in &[(1usize, 0usize), (2, 0), (1, 1), (1, 2)] {
        // probe: 0 = input, 1 = kernel, 2 = bias
        let shapes: [&[usize]; 3] = [&[2, 3, 3, 3], &[2, 2, 3, 3, 3], &[2]];
        let datas = [x.clone(), k.clone(), bias.clone()];
        let probe_data = datas[probe].clone();
        check_gradient(
            shapes[probe],
            &probe_data,
            &move |tape, probe_id| {
                let mut ids = [TensorId(0); 3];
                for (i, (shape, data)) in shapes.iter().zip(&datas).enumerate() {
                    ids[i] = if i == probe {
                        probe_id
                    } else {
                        tape.leaf(data.clone(), shape, false).unwrap()
                    };
                }
                let out = tape.conv3d(ids[0], ids[1], ids[2], stride, 1).unwrap();
                // Squared sum keeps the loss nonlinear in the output.
                let sq = tape.mul(out, out).unwrap();
                tape.reduce_sum(sq)
            },
            1e-5,
        );
    }
}

#[test]
fn upsample_copies_and_doubles() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.75], &[1, 1, 1, 1], false).unwrap();
    let up = tape.upsample_nearest2x(x).unwrap();
    assert_eq!(tape.shape(up), &[1, 2, 2, 2]);
    assert!(tape.values(up).iter().all(|&v| v == 0.75));

    let x2 = tape.leaf(vec![1.0; 8], &[1, 2, 2, 2], false).unwrap();
    let up1 = tape.upsample_nearest2x(x2).unwrap();
    let up2 = tape.upsample_nearest2x(up1).unwrap();
    assert_eq!(tape.shape(up2), &[1, 8, 8, 8]);
}

#[test]
fn upsample_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_values(8, &mut rng);
    check_gradient(
        &[1, 2, 2, 2],
        &x,
        &|tape, x_id| {
            let up = tape.upsample_nearest2x(x_id).unwrap();
            let sq = tape.mul(up, up).unwrap();
            tape.reduce_sum(sq)
        },
        1e-6,
    );
}

#[test]
fn steep_sigmoid_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.0, 1.0], &[2], false).unwrap();
    let y = tape.steep_sigmoid(x, 10.0).unwrap();
    assert!((tape.values(y)[0] - 0.5).abs() < 1e-15);
    assert!((tape.values(y)[1] - 0.9999546021312976).abs() < 1e-12);
}

#[test]
fn steep_sigmoid_limit_is_heaviside_off_zero() {
    let mut tape = Tape::new();
    let xs = vec![-3.0, -0.2, 0.4, 7.5];
    let x = tape.leaf(xs.clone(), &[4], false).unwrap();
    let soft = tape.steep_sigmoid(x, 1e6).unwrap();
    let hard = tape.heaviside(x);
    for (s, h) in tape.values(soft).iter().zip(tape.values(hard)) {
        assert!((s - h).abs() < 1e-12);
    }
}

#[test]
fn steep_sigmoid_rejects_nonpositive_gamma() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![0.0], &[1], false).unwrap();
    assert!(tape.steep_sigmoid(x, 0.0).is_err());
    assert!(tape.steep_sigmoid(x, -2.0).is_err());
}

#[test]
fn heaviside_at_zero_and_threshold_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tape = Tape::new();
    let zero = tape.leaf(vec![0.0, 0.3], &[2], false).unwrap();
    let h = tape.heaviside(zero);
    assert_eq!(tape.values(h), &[0.0, 1.0]);

    let xs = random_values(64, &mut rng);
    let x = tape.leaf(xs.clone(), &[64], false).unwrap();
    let hard = tape.heaviside(x);
    let soft = tape.steep_sigmoid(x, 10.0).unwrap();
    for i in 0..64 {
        if xs[i] != 0.0 {
            let thresholded = if tape.values(soft)[i] > 0.5 { 1.0 } else { 0.0 };
            assert_eq!(tape.values(hard)[i], thresholded);
        }
    }
}

#[test]
fn reduce_values_and_gradient() {
    let mut tape = Tape::new();
    let ones = tape.leaf(vec![1.0; 8], &[2, 2, 2], true).unwrap();
    let total = tape.reduce_sum(ones);
    assert_eq!(tape.scalar_value(total), 8.0);
    let constant = tape.leaf(vec![0.3; 12], &[12], false).unwrap();
    let mean = tape.reduce_mean(constant);
    assert!((tape.scalar_value(mean) - 0.3).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_values(10, &mut rng);
    check_gradient(
        &[10],
        &x,
        &|tape, x_id| {
            let sq = tape.mul(x_id, x_id).unwrap();
            tape.reduce_mean(sq)
        },
        1e-6,
    );
}

#[test]
fn dense_identity_and_bias_only() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, -2.0, 0.5], &[3], false).unwrap();
    let eye = tape
        .constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3])
        .unwrap();
    let zero_b = tape.constant(vec![0.0; 3], &[3]).unwrap();
    let out = tape.dense(x, eye, zero_b).unwrap();
    assert_eq!(tape.values(out), tape.values(x));

    let zero_w = tape.constant(vec![0.0; 6], &[2, 3]).unwrap();
    let b = tape.constant(vec![0.25, -1.0], &[2]).unwrap();
    let out2 = tape.dense(x, zero_w, b).unwrap();
    assert_eq!(tape.values(out2), &[0.25, -1.0]);

    let bad_w = tape.constant(vec![0.0; 8], &[2, 4]).unwrap();
    assert!(tape.dense(x, bad_w, b).is_err());
}

#[test]
fn dense_gradients_match_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_values(4, &mut rng);
    let w = random_values(12, &mut rng);
    let b = random_values(3, &mut rng);
    let shapes: [&[usize]; 3] = [&[4], &[3, 4], &[3]];
    let datas = [x, w, b];
    for probe in 0..3 {
        let datas = datas.clone();
        let probe_data = datas[probe].clone();
        check_gradient(
            shapes[probe],
            &probe_data,
            &move |tape, probe_id| {
                let mut ids = [TensorId(0); 3];
                for (i, (shape, data)) in shapes.iter().zip(&datas).enumerate() {
                    ids[i] = if i == probe {
                        probe_id
                    } else {
                        tape.leaf(data.clone(), shape, false).unwrap()
                    };
                }
                let out = tape.dense(ids[0], ids[1], ids[2]).unwrap();
                let sq = tape.mul(out, out).unwrap();
                tape.reduce_sum(sq)
            },
            1e-5,
        );
    }
}

#[test]
fn concat_and_gap_and_reshape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_values(16, &mut rng);
    check_gradient(
        &[2, 2, 2, 2],
        &x,
        &|tape, x_id| {
            let doubled = tape.mul_scalar(x_id, 2.0);
            let cat = tape.concat_channels(x_id, doubled).unwrap();
            assert_eq!(tape.shape(cat), &[4, 2, 2, 2]);
            let pooled = tape.global_avg_pool(cat).unwrap();
            let flat = tape.reshape(pooled, &[4]).unwrap();
            let sq = tape.mul(flat, flat).unwrap();
            tape.reduce_sum(sq)
        },
        1e-6,
    );
}

#[test]
fn leaky_relu_gradient_and_values() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![-2.0, 3.0], &[2], true).unwrap();
    let y = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.values(y), &[-0.4, 3.0]);
    let loss = tape.reduce_sum(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.2, 1.0]);
}

#[test]
fn every_differentiable_op_passes_fd_sweep() {
    // One composite graph touching each differentiable op kind; the FD
    // tolerance here is the blanket 1e-5 contract.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_values(2 * 64, &mut rng);
    let other = random_values(2 * 64, &mut rng);
    let kernel = random_values(2 * 2 * 27, &mut rng);
    let bias = random_values(2, &mut rng);
    let dense_w = random_values(3 * 2, &mut rng);
    let dense_b = random_values(3, &mut rng);

    check_gradient(
        &[2, 4, 4, 4],
        &x,
        &move |tape, x_id| {
            let other_id = tape.constant(other.clone(), &[2, 4, 4, 4]).unwrap();
            let k_id = tape.constant(kernel.clone(), &[2, 2, 3, 3, 3]).unwrap();
            let b_id = tape.constant(bias.clone(), &[2]).unwrap();
            let w_id = tape.constant(dense_w.clone(), &[3, 2]).unwrap();
            let db_id = tape.constant(dense_b.clone(), &[3]).unwrap();

            let conv = tape.conv3d(x_id, k_id, b_id, 2, 1).unwrap();
            let act = tape.leaky_relu(conv, 0.2);
            let up = tape.upsample_nearest2x(act).unwrap();
            let mixed = tape.mul(up, other_id).unwrap();
            let sig = tape.steep_sigmoid(mixed, 3.0).unwrap();
            let shifted = tape.add(sig, other_id).unwrap();
            let diff = tape.sub(shifted, x_id).unwrap();
            let pooled = tape.global_avg_pool(diff).unwrap();
            let densed = tape.dense(pooled, w_id, db_id).unwrap();
            let sq = tape.mul(densed, densed).unwrap();
            tape.reduce_sum(sq)
        },
        1e-5,
    );
}

#[test]
fn replay_is_deterministic_bitwise() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_values(2 * 27, &mut rng);
        let k = random_values(2 * 2 * 27, &mut rng);
        let mut tape = Tape::new();
        let x_id = tape.leaf(x, &[2, 3, 3, 3], true).unwrap();
        let k_id = tape.leaf(k, &[2, 2, 3, 3, 3], true).unwrap();
        let b_id = tape.leaf(vec![0.1, -0.2], &[2], true).unwrap();
        let conv = tape.conv3d(x_id, k_id, b_id, 1, 1).unwrap();
        let act = tape.steep_sigmoid(conv, 4.0).unwrap();
        let loss = tape.reduce_mean(act);
        tape.backward(loss).unwrap();
        let value_bits: Vec<u64> = tape.values(loss).iter().map(|v| v.to_bits()).collect();
        let grad_bits: Vec<u64> = tape
            .grad(k_id)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        (value_bits, grad_bits)
    };
    assert_eq!(run(), run());
}

#[test]
fn unreachable_tensors_have_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    let orphan = tape.leaf(vec![5.0], &[1], true).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.reduce_sum(sq);
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).is_some());
    assert!(tape.grad(orphan).is_none());
}

#[test]
fn clear_resets_the_tape() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0], &[1], true).unwrap();
    let _ = tape.mul(x, x).unwrap();
    assert!(tape.num_tensors() > 0 && tape.num_ops() > 0);
    tape.clear();
    assert_eq!(tape.num_tensors(), 0);
    assert_eq!(tape.num_ops(), 0);
}

#[test]
fn custom_op_backward_is_invoked() {
    let mut tape = Tape::new();
    let x = tape.leaf(vec![1.0, 2.0, 3.0], &[3], true).unwrap();
    // Forward: sum of cubes; backward: 3 x^2.
    let value: f64 = tape.values(x).iter().map(|v| v * v * v).sum();
    let out = tape
        .custom(
            &[x],
            vec![value],
            &[],
            Box::new(move |view, gout, sink| {
                let xv = view.values(x).to_vec();
                if let Some(gx) = sink.entry(x) {
                    for (g, v) in gx.iter_mut().zip(&xv) {
                        *g += gout[0] * 3.0 * v * v;
                    }
                }
            }),
        )
        .unwrap();
    tape.backward(out).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0, 12.0, 27.0]);
}
