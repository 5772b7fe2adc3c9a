//! Reverse-mode gradients against central finite differences, plus dropout scaling.

use headgen::driver::{dropout_mask, init_weights, DriverWeights};
use headgen::training::{batch_loss, gradients, Sample};
use headgen::{
    DriverConfig, FeatureSequence, HeadParams, Mode, ParamSequence, FEATURE_DIM, PARAM_DIM,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(rng: &mut ChaCha8Rng, n: usize, t_len: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let feats =
                Array2::from_shape_fn((t_len, FEATURE_DIM), |_| rng.random_range(-2.0..2.0));
            let truth = Array2::from_shape_fn((t_len, PARAM_DIM), |(_, k)| {
                let v: f64 = rng.random_range(-0.5..0.5);
                if k == PARAM_DIM - 1 {
                    1.0 + v
                } else {
                    v
                }
            });
            let truth = ParamSequence::from_matrix(&truth).unwrap();
            Sample {
                features: FeatureSequence::from_matrix(feats, 30.0).unwrap(),
                reference: *truth.first(),
                truth,
                attitude: None,
            }
        })
        .collect()
}

fn randomize(w: &mut DriverWeights, rng: &mut ChaCha8Rng) {
    for s in w.params.slices_mut() {
        s.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
}

/// Largest relative error over every parameter; near-zero pairs use an absolute floor.
fn check(w: &DriverWeights, samples: &[Sample], mode: Mode, h: f64) -> f64 {
    let analytic = gradients(w, samples, mode).unwrap().grads;
    let analytic: Vec<f64> = analytic.slices().iter().flat_map(|s| s.to_vec()).collect();
    let mut probe = w.clone();
    let mut worst = 0.0f64;
    let mut idx = 0;
    let n_tensors = probe.params.slices().len();
    for t in 0..n_tensors {
        let len = probe.params.slices()[t].len();
        for i in 0..len {
            let orig = probe.params.slices()[t][i];
            probe.params.slices_mut()[t][i] = orig + h;
            let up = batch_loss(&probe, samples, mode).unwrap().total();
            probe.params.slices_mut()[t][i] = orig - h;
            let down = batch_loss(&probe, samples, mode).unwrap().total();
            probe.params.slices_mut()[t][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let diff = (a - fd).abs();
            if diff > 1e-9 {
                worst = worst.max(diff / a.abs().max(fd.abs()));
            }
            idx += 1;
        }
    }
    worst
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let cfg = DriverConfig::default().with_hidden(4).with_layers(1);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut w = init_weights(&cfg, 1).unwrap();
    randomize(&mut w, &mut rng);
    let samples = random_samples(&mut rng, 2, 3);
    let worst = check(&w, &samples, Mode::Train { dropout_seed: 0 }, 1e-4);
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn stacked_dropout_model_gradients_match_finite_differences() {
    let cfg = DriverConfig::default()
        .with_hidden(4)
        .with_layers(3)
        .with_dropout(0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut w = init_weights(&cfg, 2).unwrap();
    randomize(&mut w, &mut rng);
    let samples = random_samples(&mut rng, 3, 4);
    let worst = check(&w, &samples, Mode::Train { dropout_seed: 99 }, 1e-4);
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn attitude_model_gradients_match_finite_differences() {
    let cfg = DriverConfig::default()
        .with_hidden(3)
        .with_layers(2)
        .with_attitude(3);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut w = init_weights(&cfg, 3).unwrap();
    randomize(&mut w, &mut rng);
    let mut samples = random_samples(&mut rng, 2, 3);
    samples[0].attitude = Some(headgen::AttitudeCondition::new(2, 3).unwrap());
    samples[1].attitude = Some(headgen::AttitudeCondition::new(0, 3).unwrap());
    let worst = check(&w, &samples, Mode::Train { dropout_seed: 5 }, 1e-4);
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn duplicated_batch_has_same_mean_gradient() {
    let cfg = DriverConfig::default().with_hidden(4).with_layers(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = init_weights(&cfg, 4).unwrap();
    let one = random_samples(&mut rng, 1, 4);
    let two = vec![one[0].clone(), one[0].clone()];
    let g1 = gradients(&w, &one, Mode::Infer).unwrap();
    let g2 = gradients(&w, &two, Mode::Infer).unwrap();
    assert!((g1.loss.total() - g2.loss.total()).abs() < 1e-12);
    for (a, b) in g1.grads.slices().iter().zip(g2.grads.slices()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn optimum_has_zero_gradient() {
    let cfg = DriverConfig::default().with_hidden(4).with_layers(2);
    let mut w = init_weights(&cfg, 5).unwrap();
    w.params.out_w.fill(0.0);
    w.params.out_b.fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = random_samples(&mut rng, 2, 5);
    for sample in &mut s {
        sample.truth = ParamSequence::new(vec![sample.reference; 5]).unwrap();
    }
    let g = gradients(&w, &s, Mode::Train { dropout_seed: 1 }).unwrap();
    assert_eq!(g.loss.total(), 0.0);
    assert!(g.grads.slices().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn dropout_preserves_expected_preactivation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let w = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
    let h = Array1::from_shape_fn(6, |_| rng.random_range(0.2..1.0));
    let exact = w.dot(&h);
    let draws = 20_000;
    let mut acc = Array1::<f64>::zeros(4);
    for _ in 0..draws {
        let mask = dropout_mask(&mut rng, (1, 6), 0.2);
        acc += &w.dot(&(&h * &mask.row(0)));
    }
    acc /= draws as f64;
    let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, e) in acc.iter().zip(exact.iter()) {
        assert!((a - e).abs() < 0.01 * scale, "{a} vs {e}");
    }
}

#[test]
fn reference_shift_moves_every_frame() {
    let cfg = DriverConfig::default().with_hidden(5).with_layers(2);
    let w = init_weights(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = random_samples(&mut rng, 1, 6);
    let mut shifted_ref = HeadParams::identity();
    shifted_ref.expression[5] = 0.25;
    shifted_ref.crop[1] = -0.125;
    let base = headgen::driver::forward(
        &w,
        &s[0].features,
        &HeadParams::identity(),
        Mode::Infer,
        None,
    )
    .unwrap();
    let moved =
        headgen::driver::forward(&w, &s[0].features, &shifted_ref, Mode::Infer, None).unwrap();
    for (a, b) in base.frames().iter().zip(moved.frames()) {
        assert!((b.expression[5] - a.expression[5] - 0.25).abs() < 1e-15);
        assert!((b.crop[1] - a.crop[1] + 0.125).abs() < 1e-15);
        assert_eq!(a.pose, b.pose);
    }
}
