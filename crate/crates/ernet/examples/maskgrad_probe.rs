use ernet::data::{load_dataset, normalize_minmax};
use ernet::extraction::Mode;
use ernet::pipeline::{forward, ErnetModel, ModelManifest};
use std::path::Path;

fn main() {
    let ds = load_dataset(Path::new("/tmp/test10")).unwrap();
    let s = &ds.samples[0];
    let manifest = ModelManifest::default().with_stages(1, 1).with_width_scale(0.125);
    let mut m = manifest.clone();
    m.ncc_window = 5;
    let model = ErnetModel::new(m, 11).unwrap();
    let src = normalize_minmax(&s.source);
    let mut pass = forward(&model, &src, &s.target, Mode::Train).unwrap();
    // Gradient of the loss with respect to the stage-1 mask.
    let mask_id = pass.extraction.as_ref().unwrap().mask_ids[0];
    pass.tape.backward(pass.loss_id.unwrap()).unwrap();
    // mask is an op output; its grad isn't retained unless requires_grad —
    // it is (depends on params). take grad of the mask tensor:
    let grad = pass.tape.grad(mask_id).expect("mask grad").to_vec();
    let truth = s.truth_mask.as_ref().unwrap();
    let source_vals = &src.values;

    let mut stats = vec![(0.0f64, 0usize); 3]; // brain, skull(bright non-brain), background
    for i in 0..grad.len() {
        let class = if truth[i] == 1.0 {
            0
        } else if source_vals[i] > 0.35 {
            1
        } else {
            2
        };
        stats[class].0 += grad[i];
        stats[class].1 += 1;
    }
    for (name, (sum, count)) in ["brain", "skull", "background"].iter().zip(&stats) {
        println!("{name:<10} n={count:<6} mean dL/dM = {:+.3e}", sum / *count as f64);
    }
    // positive dL/dM => optimizer lowers M (removes); negative => keeps.
}
