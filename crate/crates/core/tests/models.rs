use dystrat::data::{generate_mackey_glass, make_windows, normalize, MackeyGlassParams};
use dystrat::models::{gradient_check, train_mlp, MlpConfig};
use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rolling mean over five epochs.
fn smoothed(curve: &[f64]) -> Vec<f64> {
    curve.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect()
}

fn assert_smoothed_non_increasing(curve: &[f64]) {
    let sm = smoothed(curve);
    for (i, pair) in sm.windows(2).enumerate() {
        assert!(pair[1] <= pair[0], "smoothed loss rose at epoch {}: {} -> {}", i + 5, pair[0], pair[1]);
    }
}

#[test]
fn smoothed_loss_falls_on_mackey_glass_windows() {
    let ts = normalize(&generate_mackey_glass(1500, &MackeyGlassParams::default(), 4).unwrap()).unwrap();
    let ds = make_windows(&ts, 40, 20).unwrap();
    for k in [1, 5, 20] {
        let y = ds.targets().slice(s![.., ..k]).to_owned();
        let model = train_mlp(ds.inputs(), &y, &MlpConfig::default()).unwrap();
        assert!(model.loss_curve().len() >= 5);
        assert_smoothed_non_increasing(model.loss_curve());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn smoothed_loss_falls_on_random_regressions(seed in 0u64..10_000, d in 1usize..6, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((120, d), || rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = Array2::from_shape_fn((120, k), |(i, j)| (0..d).map(|c| x[(i, c)] * w[c * k + j]).sum::<f64>().tanh());
        let model = train_mlp(&x, &y, &MlpConfig { hidden_width: 32, max_epochs: 60, ..MlpConfig::default() }.with_seed(seed)).unwrap();
        assert_smoothed_non_increasing(model.loss_curve());
    }

    #[test]
    fn backprop_matches_finite_differences(seed in 0u64..10_000, d in 1usize..5, k in 1usize..4, width in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((8, d), || rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_simple_fn((8, k), || rng.random_range(-1.0..1.0));
        let cfg = MlpConfig { hidden_width: width, ..MlpConfig::default() }.with_seed(seed);
        let err = gradient_check(&cfg, &x, &y).unwrap();
        prop_assert!(err < 1e-4, "relative gradient error {}", err);
    }
}
