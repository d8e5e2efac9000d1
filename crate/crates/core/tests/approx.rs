mod common;

use common::{chi_square_p, net_gradient_error};
use gcrl::approx::{gumbel_softmax_sample, softmax, AdamState, DenseNet, Normalizer, OutputActivation};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gumbel_uniform_logits_sample_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        counts[gumbel_softmax_sample(&[0.0f64; 5], 1.0, &mut rng).unwrap().index] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.2).abs() < 0.02, "{counts:?}");
    }
    assert!(chi_square_p(&counts, &[draws as f64 / 5.0; 5]) > 0.01);
}

#[test]
fn gumbel_matches_softmax_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = [0.5f64, -1.0, 1.5, 0.0, -0.3];
    let p = softmax(&logits);
    let draws = 100_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        counts[gumbel_softmax_sample(&logits, 1.0, &mut rng).unwrap().index] += 1;
    }
    let expected: Vec<f64> = p.iter().map(|p| p * draws as f64).collect();
    let pv = chi_square_p(&counts, &expected);
    assert!(pv > 0.01, "p = {pv}, counts {counts:?}");
}

#[test]
fn two_eight_one_net_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = DenseNet::<f64>::new(&[2, 8, 1], OutputActivation::Linear, &mut rng).unwrap();
    let x = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
    let c = Array2::from_shape_fn((4, 1), |_| rng.random_range(-1.0..1.0));
    let err = net_gradient_error(&net, &x, &c, 1e-5);
    assert!(err <= 1e-5, "relative error {err}");
}

#[test]
fn adam_constant_gradient_moves_by_lr() {
    let mut net = DenseNet::<f64>::zeros(&[1, 1], OutputActivation::Linear).unwrap();
    let mut opt = AdamState::new(&net, 0.01);
    let mut grads = gcrl::approx::Grads::zeros_like(&net);
    grads.layers[0].weights[[0, 0]] = -3.0;
    for _ in 0..500 {
        let before = net.layers()[0].weights[[0, 0]];
        opt.step(&mut net, &grads).unwrap();
        let step = net.layers()[0].weights[[0, 0]] - before;
        assert!((step - 0.01).abs() < 1e-8, "{step}");
    }
}

fn activation() -> impl Strategy<Value = OutputActivation> {
    prop_oneof![
        Just(OutputActivation::Linear),
        Just(OutputActivation::Tanh),
        Just(OutputActivation::Softmax)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_net_gradients_match_finite_differences(
        seed in any::<u64>(),
        input in 1usize..5,
        hidden in 2usize..7,
        out in 1usize..4,
        depth in 1usize..3,
        act in activation(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(out);
        let net = DenseNet::<f64>::new(&sizes, act, &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, input), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((3, out), |_| rng.random_range(-1.0..1.0));
        let err = net_gradient_error(&net, &x, &c, 1e-5);
        prop_assert!(err <= 1e-5, "relative error {}", err);
    }

    #[test]
    fn normalizer_mean_batch_keeps_mean(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..20),
        copies in 1usize..10,
    ) {
        let mut norm = Normalizer::<f64>::new(3);
        norm.update(rows.iter().map(|r| r.as_slice())).unwrap();
        let mean = norm.mean().to_vec();
        let batch = vec![mean.clone(); copies];
        norm.update(batch.iter().map(|r| r.as_slice())).unwrap();
        for (a, b) in norm.mean().iter().zip(&mean) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        let z = norm.normalize(&mean).unwrap();
        prop_assert!(z.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn normalized_values_are_clipped(
        rows in prop::collection::vec(prop::collection::vec(-1000.0f64..1000.0, 2), 2..20),
        probe in prop::collection::vec(-1e6f64..1e6, 2),
    ) {
        let mut norm = Normalizer::<f64>::new(2);
        norm.update(rows.iter().map(|r| r.as_slice())).unwrap();
        for v in norm.normalize(&probe).unwrap() {
            prop_assert!(v.abs() <= 5.0);
        }
        prop_assert!(norm.std().iter().all(|&s| s >= 0.01));
    }
}
