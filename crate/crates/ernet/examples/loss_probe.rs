use ernet::data::{load_dataset, normalize_minmax};
use ernet::geometry::{warp_values, AffineTransform};
use ernet::objective::ncc_loss;
use ernet::tensor::Tape;
use std::path::Path;

fn loss_of(warped: &[f64], target: &[f64], dims: [usize; 3], window: usize) -> f64 {
    let mut tape = Tape::new();
    let a = tape.leaf(warped.to_vec(), &dims, false).unwrap();
    let b = tape.leaf(target.to_vec(), &dims, false).unwrap();
    let l = ncc_loss(&mut tape, a, b, window).unwrap();
    tape.scalar_value(l)
}

fn main() {
    let ds = load_dataset(Path::new("/tmp/test10")).unwrap();
    for idx in [0usize, 1] {
        let s = &ds.samples[idx];
        let dims = s.source.dims;
        let frame = s.source.frame();
        let truth = s.truth_transform.unwrap();
        let src = normalize_minmax(&s.source);
        let masked: Vec<f64> = src
            .values
            .iter()
            .zip(s.truth_mask.as_ref().unwrap())
            .map(|(v, m)| v * m)
            .collect();

        let mut zoom = AffineTransform::scaling(1.4);
        zoom.params[3] = -0.2;
        zoom.params[7] = -0.15;

        let configs: [(&str, &[f64], AffineTransform); 4] = [
            ("identity", &src.values, AffineTransform::identity()),
            ("truth", &src.values, truth),
            ("truth+mask", &masked, truth),
            ("zoom-degen", &src.values, zoom),
        ];
        for (name, values, t) in configs {
            let warped = warp_values(values, dims, &t, &frame);
            println!(
                "sample {idx} {name:<11} loss(w9) {:+.6}  loss(w5) {:+.6}",
                loss_of(&warped, &s.target.values, dims, 9),
                loss_of(&warped, &s.target.values, dims, 5),
            );
        }
    }
}
