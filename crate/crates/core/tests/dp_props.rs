mod common;

use fedchaos::dp::{self, DpConfig};
use fedchaos::nn::{self, ModelParams, PerExampleGrads};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gradient() -> impl Strategy<Value = ModelParams> {
    (prop::collection::vec(1usize..=5, 2..=4), any::<u64>(), 0.01f64..100.0)
        .prop_map(|(sizes, seed, scale)| common::random_params(&sizes, &mut ChaCha8Rng::seed_from_u64(seed), scale))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn clipped_norm_never_exceeds_bound(g in gradient(), c in 0.01f64..10.0) {
        let clipped = dp::clip_gradient(&g, c).unwrap();
        prop_assert!(clipped.l2_norm() <= c * (1.0 + 1e-12));
        if g.l2_norm() <= c {
            prop_assert_eq!(&clipped, &g);
        }
    }
}

proptest! {
    #[test]
    fn clipping_preserves_direction(g in gradient(), c in 0.01f64..10.0) {
        let clipped = dp::clip_gradient(&g, c).unwrap();
        let k = clipped.l2_norm() / g.l2_norm();
        for (a, b) in g.values().zip(clipped.values()) {
            prop_assert!((a * k - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn epsilon_is_monotone(steps in 1u64..500, extra in 1u64..500, sigma in 0.3f64..5.0, n in 50usize..2000) {
        let cfg = DpConfig { noise_scale: sigma, ..DpConfig::default() };
        let a = dp::estimate_epsilon(&cfg, steps, n).unwrap().epsilon;
        let b = dp::estimate_epsilon(&cfg, steps + extra, n).unwrap().epsilon;
        prop_assert!(b >= a);
        let louder = DpConfig { noise_scale: sigma * 1.5, ..cfg };
        prop_assert!(dp::estimate_epsilon(&louder, steps, n).unwrap().epsilon <= a);
    }
}

#[test]
fn noiseless_unclipped_step_is_bitwise_sgd() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = common::random_params(&[3, 4, 1], &mut rng, 1.0);
    let grads = PerExampleGrads {
        grads: (0..4)
            .map(|_| common::random_params(&[3, 4, 1], &mut rng, 0.05))
            .collect(),
    };
    let cfg = DpConfig {
        clip_norm: 10.0,
        noise_scale: 0.0,
        lot_size: 4,
        delta: 1e-5,
    };
    let dp_out = dp::dp_sgd_step(&params, &grads, &cfg, 0.1, &mut rng).unwrap();
    let mut sum = params.zeros_like();
    for g in &grads.grads {
        sum.add_scaled(g, 1.0).unwrap();
    }
    sum.scale(0.25);
    let plain = nn::sgd_step(&params, &sum, 0.1).unwrap();
    assert_eq!(dp_out, plain);
}

#[test]
fn injected_noise_has_the_stated_scale() {
    let cfg = DpConfig {
        clip_norm: 1.5,
        noise_scale: 1.2,
        lot_size: 4,
        delta: 1e-5,
    };
    let zero = PerExampleGrads {
        grads: vec![ModelParams::zeros(&[1, 1]); 4],
    };
    let expected = cfg.noise_scale * cfg.clip_norm / cfg.lot_size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            dp::noisy_lot_gradient(&zero, &cfg, &mut rng).unwrap().layers[0]
                .weights
                .get(0, 0)
        })
        .collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 3.0 * expected / 100.0, "mean {mean}");
    assert!((std / expected - 1.0).abs() <= 0.05, "std {std} vs {expected}");
}
