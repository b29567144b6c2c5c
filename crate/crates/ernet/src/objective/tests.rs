use super::*;
use crate::refcheck;
use crate::tensor::Tape;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(dims: [usize; 3], rng: &mut impl Rng) -> Vec<f64> {
    (0..dims.iter().product()).map(|_| rng.random::<f64>()).collect()
}

fn ncc_of(a: &[f64], b: &[f64], dims: [usize; 3], window: usize) -> f64 {
    let mut tape = Tape::new();
    let a_id = tape.leaf(a.to_vec(), &dims, false).unwrap();
    let b_id = tape.leaf(b.to_vec(), &dims, false).unwrap();
    let loss = ncc_loss(&mut tape, a_id, b_id, window).unwrap();
    tape.scalar_value(loss)
}

#[test]
fn ncc_of_identical_nonconstant_volume_is_minus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let dims = [10, 9, 8];
    let v = random_volume(dims, &mut rng);
    let loss = ncc_of(&v, &v, dims, 9);
    assert!((loss + 1.0).abs() < 1e-3, "loss {loss}");
}

#[test]
fn ncc_is_affine_invariant_per_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dims = [9, 9, 9];
    let t = random_volume(dims, &mut rng);
    let warped: Vec<f64> = t.iter().map(|v| 2.0 * v + 3.0).collect();
    let loss = ncc_of(&warped, &t, dims, 9);
    assert!((loss + 1.0).abs() < 1e-3, "loss {loss}");

    let base = ncc_of(&warped, &t, dims, 9);
    let scaled_target: Vec<f64> = t.iter().map(|v| 0.7 * v + 0.1).collect();
    let shifted = ncc_of(&warped, &scaled_target, dims, 9);
    assert!((base - shifted).abs() < 1e-3);
}

#[test]
fn ncc_of_independent_noise_is_small_but_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let dims = [16, 16, 16];
    let a = random_volume(dims, &mut rng);
    let b = random_volume(dims, &mut rng);
    let loss = ncc_of(&a, &b, dims, 9);
    assert!(loss > -0.25 && loss < 0.0, "loss {loss}");
    let reference = refcheck::naive_ncc(&a, &b, dims, 9, NCC_EPSILON);
    assert!((loss - reference).abs() < 1e-10);
}

#[test]
fn ncc_matches_naive_loops_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for window in [3usize, 5, 9] {
        for _ in 0..5 {
            let dims = [
                rng.random_range(3..8),
                rng.random_range(3..8),
                rng.random_range(3..8),
            ];
            let a = random_volume(dims, &mut rng);
            let b = random_volume(dims, &mut rng);
            let fast = ncc_of(&a, &b, dims, window);
            let slow = refcheck::naive_ncc(&a, &b, dims, window, NCC_EPSILON);
            assert!((fast - slow).abs() < 1e-10, "window {window}: {fast} vs {slow}");
        }
    }
}

#[test]
fn ncc_rejects_even_window_and_mismatched_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![0.0; 27], &[3, 3, 3]).unwrap();
    let b = tape.constant(vec![0.0; 27], &[3, 3, 3]).unwrap();
    assert!(ncc_loss(&mut tape, a, b, 8).is_err());
    let c = tape.constant(vec![0.0; 8], &[2, 2, 2]).unwrap();
    assert!(ncc_loss(&mut tape, a, c, 9).is_err());
}

#[test]
fn ncc_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let dims = [7, 6, 5];
    let a = random_volume(dims, &mut rng);
    let b = random_volume(dims, &mut rng);
    let ab = ncc_of(&a, &b, dims, 5);
    let ba = ncc_of(&b, &a, dims, 5);
    assert!((ab - ba).abs() < 1e-12);
}

#[test]
fn ncc_gradients_match_fd_for_both_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let dims = [5, 5, 5];
    let a = refcheck::smooth_random_volume(dims, 1.0, &mut rng);
    let b = refcheck::smooth_random_volume(dims, 1.0, &mut rng);

    let mut tape = Tape::new();
    let a_id = tape.leaf(a.clone(), &dims, true).unwrap();
    let b_id = tape.leaf(b.clone(), &dims, true).unwrap();
    let loss = ncc_loss(&mut tape, a_id, b_id, 5).unwrap();
    tape.backward(loss).unwrap();
    let ga = tape.grad(a_id).unwrap().to_vec();
    let gb = tape.grad(b_id).unwrap().to_vec();

    let b_fixed = b.clone();
    let fd_a = refcheck::fd_gradient(
        &mut |probe: &[f64]| ncc_of(probe, &b_fixed, dims, 5),
        &a,
        1e-5,
    );
    let a_fixed = a.clone();
    let fd_b = refcheck::fd_gradient(
        &mut |probe: &[f64]| ncc_of(&a_fixed, probe, dims, 5),
        &b,
        1e-5,
    );
    for (g, f) in ga.iter().zip(&fd_a) {
        assert!(refcheck::rel_err(*g, *f, 1e-5) < 1e-5, "{g} vs {f}");
    }
    for (g, f) in gb.iter().zip(&fd_b) {
        assert!(refcheck::rel_err(*g, *f, 1e-5) < 1e-5, "{g} vs {f}");
    }
}

fn smoothness_of(mask: &[f64], dims: [usize; 3]) -> f64 {
    let mut tape = Tape::new();
    let m = tape.leaf(mask.to_vec(), &dims, false).unwrap();
    let r = mask_smoothness(&mut tape, m).unwrap();
    tape.scalar_value(r)
}

#[test]
fn smoothness_constant_mask_is_zero() {
    assert_eq!(smoothness_of(&vec![0.42; 4 * 5 * 6], [4, 5, 6]), 0.0);
}

#[test]
fn smoothness_single_interior_voxel_is_six() {
    let mut mask = vec![0.0; 125];
    mask[(2 * 5 + 2) * 5 + 2] = 1.0;
    assert_eq!(smoothness_of(&mask, [5, 5, 5]), 6.0);
}

#[test]
fn smoothness_block_matches_naive_exactly() {
    let mut mask = vec![0.0; 125];
    for x in 1..4 {
        for y in 1..4 {
            for z in 1..4 {
                mask[(x * 5 + y) * 5 + z] = 1.0;
            }
        }
    }
    let fast = smoothness_of(&mask, [5, 5, 5]);
    let naive = refcheck::naive_smoothness(&mask, [5, 5, 5]);
    assert_eq!(fast, naive);
}

#[test]
fn smoothness_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let dims = [6, 6, 6];
    let mask = random_volume(dims, &mut rng);
    let base = smoothness_of(&mask, dims);

    let complement: Vec<f64> = mask.iter().map(|v| 1.0 - v).collect();
    assert!((smoothness_of(&complement, dims) - base).abs() < 1e-12);

    // Axis permutation of a cubic volume (swap x and z).
    let mut permuted = vec![0.0; mask.len()];
    for x in 0..6 {
        for y in 0..6 {
            for z in 0..6 {
                permuted[(z * 6 + y) * 6 + x] = mask[(x * 6 + y) * 6 + z];
            }
        }
    }
    assert!((smoothness_of(&permuted, dims) - base).abs() < 1e-12);
}

#[test]
fn smoothness_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let dims = [4, 4, 4];
    let mask = random_volume(dims, &mut rng);
    let mut tape = Tape::new();
    let m = tape.leaf(mask.clone(), &dims, true).unwrap();
    let r = mask_smoothness(&mut tape, m).unwrap();
    tape.backward(r).unwrap();
    let grad = tape.grad(m).unwrap().to_vec();
    let fd = refcheck::fd_gradient(&mut |p: &[f64]| smoothness_of(p, dims), &mask, 1e-5);
    for (g, f) in grad.iter().zip(&fd) {
        assert!(refcheck::rel_err(*g, *f, 1e-6) < 1e-6, "{g} vs {f}");
    }
}

#[test]
fn smoothness_accepts_single_channel_form() {
    let mut tape = Tape::new();
    let m = tape.leaf(vec![0.5; 27], &[1, 3, 3, 3], false).unwrap();
    let r = mask_smoothness(&mut tape, m).unwrap();
    assert_eq!(tape.scalar_value(r), 0.0);
}

#[test]
fn total_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    let dims = [6, 6, 6];
    let warped = random_volume(dims, &mut rng);
    let target = random_volume(dims, &mut rng);
    let masks: Vec<Vec<f64>> = (0..3).map(|_| random_volume(dims, &mut rng)).collect();

    // lambda = 0: total equals similarity.
    let mut tape = Tape::new();
    let w = tape.leaf(warped.clone(), &dims, false).unwrap();
    let t = tape.leaf(target.clone(), &dims, false).unwrap();
    let mask_ids: Vec<_> = masks
        .iter()
        .map(|m| tape.leaf(m.clone(), &dims, false).unwrap())
        .collect();
    let (_, breakdown) = total_loss(&mut tape, &mask_ids, w, t, 0.0, 5).unwrap();
    assert!((breakdown.total - breakdown.similarity).abs() < 1e-15);

    // Constant masks: regularizers vanish, total equals similarity at any lambda.
    let mut tape = Tape::new();
    let w = tape.leaf(warped.clone(), &dims, false).unwrap();
    let t = tape.leaf(target.clone(), &dims, false).unwrap();
    let const_masks: Vec<_> = (0..2)
        .map(|_| tape.leaf(vec![0.9; 216], &dims, false).unwrap())
        .collect();
    let (_, breakdown) = total_loss(&mut tape, &const_masks, w, t, 1.0, 5).unwrap();
    assert_eq!(breakdown.regularizer_sum(), 0.0);
    assert!((breakdown.total - breakdown.similarity).abs() < 1e-15);

    // Random instance: total equals hand-summed components.
    let mut tape = Tape::new();
    let w = tape.leaf(warped, &dims, false).unwrap();
    let t = tape.leaf(target, &dims, false).unwrap();
    let mask_ids: Vec<_> = masks
        .iter()
        .map(|m| tape.leaf(m.clone(), &dims, false).unwrap())
        .collect();
    let lambda = 0.7;
    let (_, breakdown) = total_loss(&mut tape, &mask_ids, w, t, lambda, 5).unwrap();
    let hand = breakdown.similarity + lambda * breakdown.regularizer_sum();
    assert!((breakdown.total - hand).abs() < 1e-12);
}

#[test]
fn dice_ext_identities_and_enumeration_oracle() {
    let mut mask = vec![0.0; 64];
    for i in 10..30 {
        mask[i] = 1.0;
    }
    assert_eq!(dice_ext(&mask, &mask).unwrap(), 1.0);

    let mut disjoint = vec![0.0; 64];
    for i in 40..50 {
        disjoint[i] = 1.0;
    }
    assert_eq!(dice_ext(&mask, &disjoint).unwrap(), 0.0);

    // |A| = 8, |B| = 8, |A∩B| = 4.
    let mut a = vec![0.0; 64];
    let mut b = vec![0.0; 64];
    for i in 0..8 {
        a[i] = 1.0;
    }
    for i in 4..12 {
        b[i] = 1.0;
    }
    let fast = dice_ext(&a, &b).unwrap();
    assert_eq!(fast, 0.5);
    assert_eq!(fast, refcheck::enum_dice(&a, &b, [4, 4, 4]));
}

#[test]
fn dice_ext_empty_conventions_and_binary_check() {
    let empty = vec![0.0; 8];
    let mut full = vec![0.0; 8];
    full[3] = 1.0;
    assert_eq!(dice_ext(&empty, &empty).unwrap(), 1.0);
    assert_eq!(dice_ext(&empty, &full).unwrap(), 0.0);
    assert_eq!(dice_ext(&full, &empty).unwrap(), 0.0);
    let soft = vec![0.5; 8];
    assert!(dice_ext(&soft, &full).is_err());
}

#[test]
fn dice_reg_identity_and_swapped_labels() {
    let frame = crate::geometry::CoordinateFrame::new([4, 4, 4]).unwrap();
    let mut seg = vec![0u32; 64];
    seg[5] = 1;
    seg[6] = 1;
    seg[25] = 2;
    let (mean, per_label) = dice_reg(
        &seg,
        &seg,
        [4, 4, 4],
        &crate::geometry::AffineTransform::identity(),
        &frame,
    );
    assert_eq!(mean, 1.0);
    assert_eq!(per_label, vec![(1, 1.0), (2, 1.0)]);

    let swapped: Vec<u32> = seg
        .iter()
        .map(|&l| match l {
            1 => 2,
            2 => 1,
            other => other,
        })
        .collect();
    let (mean, per_label) = dice_reg(
        &seg,
        &swapped,
        [4, 4, 4],
        &crate::geometry::AffineTransform::identity(),
        &frame,
    );
    assert_eq!(mean, 0.0);
    assert_eq!(per_label, vec![(1, 0.0), (2, 0.0)]);
}

#[test]
fn dice_reg_translation_matches_enumeration() {
    let dims = [8, 8, 8];
    let frame = crate::geometry::CoordinateFrame::new(dims).unwrap();
    let mut seg = vec![0u32; 512];
    for x in 2..5 {
        for y in 2..5 {
            for z in 2..5 {
                seg[(x * 8 + y) * 8 + z] = 1 + (x % 2) as u32;
            }
        }
    }
    // Transform sampling one voxel along x: warped(x) = seg(x + 1).
    let t = crate::geometry::AffineTransform::translation([2.0 / 7.0, 0.0, 0.0]);
    let (mean, _) = dice_reg(&seg, &seg, dims, &t, &frame);
    let warped = crate::geometry::warp_labels(&seg, dims, &t, &frame);
    let expected = refcheck::enum_label_dice(&warped, &seg);
    assert!((mean - expected).abs() < 1e-12);
    assert!(mean < 1.0);
}

#[test]
fn component_counting_cases() {
    let dims = [3, 3, 3];
    assert_eq!(count_components(&vec![0.0; 27], dims).unwrap(), 0);
    assert_eq!(count_components(&vec![1.0; 27], dims).unwrap(), 1);

    let mut diag = vec![0.0; 27];
    diag[0] = 1.0;
    diag[(1 * 3 + 1) * 3] = 1.0;
    assert_eq!(count_components(&diag, dims).unwrap(), 2);
    assert!(count_components(&vec![0.25; 27], dims).is_err());
}

#[test]
fn component_count_matches_propagation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..20 {
        let dims = [6, 6, 6];
        let mask: Vec<f64> = (0..216)
            .map(|_| if rng.random::<f64>() < 0.35 { 1.0 } else { 0.0 })
            .collect();
        let bools: Vec<bool> = mask.iter().map(|&v| v == 1.0).collect();
        assert_eq!(
            count_components(&mask, dims).unwrap(),
            refcheck::components_by_propagation(&bools, dims)
        );
    }
}

#[test]
fn metric_report_serializes_with_loss_breakdown() {
    let report = MetricReport {
        dice_ext: 0.95,
        dice_reg: 0.8,
        per_label: vec![(1, 0.75), (2, 0.85)],
        component_count: 1,
        loss: Some(LossBreakdown {
            similarity: -0.9,
            regularizer_per_stage: vec![1.0, 2.0],
            lambda: 1.0,
            total: 2.1,
        }),
        translation_error_voxels: Some(0.4),
    };
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("dice_ext"));
    assert!(json.contains("component_count"));
    assert!(json.contains("similarity"));
    let back: MetricReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.per_label, report.per_label);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_dice_symmetry_and_range(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..64).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
        let b: Vec<f64> = (0..64).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
        let ab = dice_ext(&a, &b).unwrap();
        let ba = dice_ext(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.iter().any(|&v| v == 1.0) {
            prop_assert_eq!(dice_ext(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn prop_ncc_window_affine_invariance(seed in 0u64..200, alpha in 0.2f64..3.0, beta in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [6, 6, 6];
        let a: Vec<f64> = (0..216).map(|_| rng.random::<f64>()).collect();
        let t: Vec<f64> = (0..216).map(|_| rng.random::<f64>()).collect();
        let scaled: Vec<f64> = t.iter().map(|v| alpha * v + beta).collect();
        let base = {
            let mut tape = Tape::new();
            let x = tape.leaf(a.clone(), &dims, false).unwrap();
            let y = tape.leaf(t, &dims, false).unwrap();
            let l = ncc_loss(&mut tape, x, y, 5).unwrap();
            tape.scalar_value(l)
        };
        let shifted = {
            let mut tape = Tape::new();
            let x = tape.leaf(a, &dims, false).unwrap();
            let y = tape.leaf(scaled, &dims, false).unwrap();
            let l = ncc_loss(&mut tape, x, y, 5).unwrap();
            tape.scalar_value(l)
        };
        prop_assert!((base - shifted).abs() < 1e-3);
    }
}
