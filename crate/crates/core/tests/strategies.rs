use dystrat::data::{generate_noisy_sine, make_windows, WindowedDataset};
use dystrat::models::{MlpConfig, TrainedRegressor};
use dystrat::strategies::{
    enumerate_strategies, train_all, train_component, train_strategy, Regressor, StrategySet, StrategySpec,
    TrainedStrategy,
};
use dystrat::{Error, Result};
use ndarray::Array2;
use proptest::prelude::*;

/// Deterministic stand-in for a trained model.
#[derive(Debug, Clone)]
struct Stub {
    din: usize,
    dout: usize,
    f: fn(&[f64], usize) -> Vec<f64>,
}

impl Regressor for Stub {
    fn input_dim(&self) -> usize {
        self.din
    }
    fn output_dim(&self) -> usize {
        self.dout
    }
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(input.len(), self.din);
        Ok((self.f)(input, self.dout))
    }
}

fn persistence(x: &[f64], dout: usize) -> Vec<f64> {
    vec![*x.last().unwrap(); dout]
}

fn identity(x: &[f64], dout: usize) -> Vec<f64> {
    x[..dout].to_vec()
}

// Nonlinear and position-sensitive, so any misaligned input shows up.
fn mixer(x: &[f64], dout: usize) -> Vec<f64> {
    let s: f64 = x.iter().enumerate().map(|(k, v)| v * (k as f64 + 1.0) * 0.37).sum();
    (0..dout).map(|j| (s + j as f64 * 0.11).sin() * 0.9).collect()
}

fn stub(din: usize, dout: usize, f: fn(&[f64], usize) -> Vec<f64>) -> Stub {
    Stub { din, dout, f }
}

fn small_config() -> MlpConfig {
    MlpConfig {
        hidden_width: 16,
        max_epochs: 25,
        seed: 11,
        ..MlpConfig::default()
    }
}

fn sine_windows(w: usize, h: usize) -> WindowedDataset {
    let ts = generate_noisy_sine(160, 17.0, 0.05, 3).unwrap();
    make_windows(&ts, w, h).unwrap()
}

#[test]
fn persistence_recursion_is_a_fixed_point() {
    let s = TrainedStrategy::from_parts(StrategySpec::recmo(1), 2, 3, vec![stub(2, 1, persistence)]).unwrap();
    assert_eq!(s.forecast(&[1.0, 2.0]).unwrap(), vec![2.0, 2.0, 2.0]);
}

#[test]
fn dirmo_concatenates_in_index_order() {
    fn c1(_: &[f64], _: usize) -> Vec<f64> {
        vec![0.1, 0.2]
    }
    fn c2(_: &[f64], _: usize) -> Vec<f64> {
        vec![0.3, 0.4]
    }
    let s = TrainedStrategy::from_parts(StrategySpec::dirmo(2), 3, 4, vec![stub(3, 2, c1), stub(3, 2, c2)]).unwrap();
    assert_eq!(s.forecast(&[9.0, 9.0, 9.0]).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
}

#[test]
fn identity_recursion_repeats_the_window() {
    let s = TrainedStrategy::from_parts(StrategySpec::recmo(2), 2, 4, vec![stub(2, 2, identity)]).unwrap();
    let (a, b) = (0.25, -1.5);
    assert_eq!(s.forecast(&[a, b]).unwrap(), vec![a, b, a, b]);
}

#[test]
fn wrong_window_length_is_rejected() {
    let s = TrainedStrategy::from_parts(StrategySpec::recmo(1), 2, 3, vec![stub(2, 1, persistence)]).unwrap();
    assert!(matches!(s.forecast(&[1.0]), Err(Error::InvalidInput(_))));
    assert!(TrainedStrategy::from_parts(StrategySpec::dirmo(2), 3, 4, vec![stub(3, 2, mixer)]).is_err());
}

/// The rolling recursion written out by position: step `k` feeds `z[k*s .. k*s + w]` where
/// `z` is the window followed by every prediction made so far.
fn straight_line_recursion(f: fn(&[f64], usize) -> Vec<f64>, x: &[f64], sigma: usize, h: usize) -> Vec<f64> {
    let w = x.len();
    let steps = h.div_ceil(sigma);
    let mut preds: Vec<f64> = Vec::new();
    for k in 0..steps {
        let input: Vec<f64> = (0..w)
            .map(|j| {
                let p = k * sigma + j;
                if p < w { x[p] } else { preds[p - w] }
            })
            .collect();
        preds.extend(f(&input, sigma));
    }
    preds[..h].to_vec()
}

fn divisor_of(h: usize, pick: usize) -> usize {
    let ds: Vec<usize> = (1..=h).filter(|d| h % d == 0).collect();
    ds[pick % ds.len()]
}

proptest! {
    #[test]
    fn recursion_matches_straight_line(
        w in 1usize..12,
        h in 1usize..16,
        pick in 0usize..8,
        x in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        let sigma = divisor_of(h, pick);
        let x = &x[..w];
        let spec = if sigma == h { StrategySpec::mo(h) } else { StrategySpec::recmo(sigma) };
        let s = TrainedStrategy::from_parts(spec, w, h, vec![stub(w, sigma, mixer)]).unwrap();
        prop_assert_eq!(s.forecast(x).unwrap(), straight_line_recursion(mixer, x, sigma, h));
    }

    #[test]
    fn every_kind_returns_exactly_h_values(
        w in 1usize..10,
        h in 1usize..13,
        pick in 0usize..8,
        kind in 0usize..5,
        x in prop::collection::vec(-1.0f64..1.0, 10),
    ) {
        let sigma = divisor_of(h, pick);
        let x = &x[..w];
        let (spec, models) = match kind {
            0 => (StrategySpec::mo(h), vec![stub(w, h, mixer)]),
            1 => (StrategySpec::recmo(sigma), vec![stub(w, sigma, mixer)]),
            2 => (StrategySpec::dirmo(sigma), (0..h / sigma).map(|_| stub(w, sigma, mixer)).collect()),
            3 => (StrategySpec::dirrec(), (0..h).map(|i| stub(w + i, 1, mixer)).collect()),
            _ => (StrategySpec::rectify(), vec![stub(w, 1, mixer), stub(w, h, mixer)]),
        };
        let s = TrainedStrategy::from_parts(spec, w, h, models).unwrap();
        let f = s.forecast(x).unwrap();
        prop_assert_eq!(f.len(), h);
        prop_assert!(f.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn dirrec_feeds_earlier_forecasts_forward() {
    fn sum(x: &[f64], _: usize) -> Vec<f64> {
        vec![x.iter().sum()]
    }
    let models = (0..3).map(|i| stub(2 + i, 1, sum)).collect();
    let s = TrainedStrategy::from_parts(StrategySpec::dirrec(), 2, 3, models).unwrap();
    // [1,2] -> 3 -> 6 -> 12
    assert_eq!(s.forecast(&[1.0, 2.0]).unwrap(), vec![3.0, 6.0, 12.0]);
}

#[test]
fn trained_model_counts_and_batch_agreement() {
    let train = sine_windows(8, 4);
    let cfg = small_config();
    for (spec, n) in [
        (StrategySpec::mo(4), 1),
        (StrategySpec::recmo(2), 1),
        (StrategySpec::dirmo(2), 2),
        (StrategySpec::dirmo(1), 4),
        (StrategySpec::dirrec(), 4),
        (StrategySpec::rectify(), 2),
    ] {
        let s = train_strategy(&spec, &train, &cfg).unwrap();
        assert_eq!(s.models().len(), n, "{spec}");
        let batch = s.forecast_batch(train.inputs().view()).unwrap();
        for i in [0, 7, train.len() - 1] {
            assert_eq!(batch.row(i).to_vec(), s.forecast(&train.input(i).to_vec()).unwrap());
        }
    }
}

#[test]
fn dirmo_sigma5_h20_trains_four_models() {
    let ts = generate_noisy_sine(120, 23.0, 0.0, 1).unwrap();
    let train = make_windows(&ts, 20, 20).unwrap();
    let cfg = MlpConfig { max_epochs: 2, hidden_width: 8, ..MlpConfig::default() };
    assert_eq!(train_strategy(&StrategySpec::dirmo(5), &train, &cfg).unwrap().models().len(), 4);
}

#[test]
fn sigma_equal_to_h_collapses_to_mo() {
    let train = sine_windows(8, 4);
    let cfg = small_config();
    let mo = train_strategy(&StrategySpec::mo(4), &train, &cfg).unwrap();
    let r = train_strategy(&StrategySpec::recmo(4), &train, &cfg).unwrap();
    let d = train_strategy(&StrategySpec::dirmo(4), &train, &cfg).unwrap();
    let a = mo.forecast_batch(train.inputs().view()).unwrap();
    assert_eq!(a, r.forecast_batch(train.inputs().view()).unwrap());
    assert_eq!(a, d.forecast_batch(train.inputs().view()).unwrap());
}

#[test]
fn dirmo_components_do_not_depend_on_training_order() {
    let train = sine_windows(8, 6);
    let cfg = small_config();
    let spec = StrategySpec::dirmo(2);
    let trained = train_strategy(&spec, &train, &cfg).unwrap();
    let mut reversed: Vec<(usize, TrainedRegressor)> = (0..3)
        .rev()
        .map(|i| (i, train_component(&spec, i, &train, &cfg).unwrap()))
        .collect();
    reversed.sort_by_key(|(i, _)| *i);
    let rebuilt =
        TrainedStrategy::from_parts(spec, 8, 6, reversed.into_iter().map(|(_, m)| m).collect()).unwrap();
    for i in 0..train.len() {
        let x = train.input(i).to_vec();
        assert_eq!(trained.forecast(&x).unwrap(), rebuilt.forecast(&x).unwrap());
    }
    assert!(train_component(&StrategySpec::dirrec(), 0, &train, &cfg).is_err());
}

#[test]
fn rectify_is_base_plus_correction_exactly() {
    let train = sine_windows(8, 4);
    let s = train_strategy(&StrategySpec::rectify(), &train, &small_config()).unwrap();
    let base = TrainedStrategy::from_parts(StrategySpec::recmo(1), 8, 4, vec![s.models()[0].clone()]).unwrap();
    for i in 0..train.len() {
        let x = train.input(i).to_vec();
        let b = base.forecast(&x).unwrap();
        let c = s.models()[1].predict(&x).unwrap();
        let expected: Vec<f64> = b.iter().zip(&c).map(|(b, c)| b + c).collect();
        assert_eq!(s.forecast(&x).unwrap(), expected);
    }
}

#[test]
fn rectify_correction_does_not_hurt_on_ar1_data() {
    // A noiseless sine obeys x_{t+1} = 2cos(w) x_t - x_{t-1}, linear in the window.
    let ts = generate_noisy_sine(400, 25.0, 0.0, 0).unwrap();
    let train = make_windows(&ts, 6, 5).unwrap();
    let cfg = MlpConfig { seed: 4, batch_size: Some(32), ..MlpConfig::default() };
    let s = train_strategy(&StrategySpec::rectify(), &train, &cfg).unwrap();
    let base = TrainedStrategy::from_parts(StrategySpec::recmo(1), 6, 5, vec![s.models()[0].clone()]).unwrap();

    let base_f = base.forecast_batch(train.inputs().view()).unwrap();
    let residuals: Array2<f64> = train.targets() - &base_f;
    let corrected = &residuals - &s.models()[1].predict_batch(train.inputs().view()).unwrap();
    let base_mse = residuals.mapv(|r| r * r).mean().unwrap();
    let corrected_mse = corrected.mapv(|r| r * r).mean().unwrap();
    assert!(base_mse < 1e-3, "base should be near exact, got {base_mse}");
    assert!(corrected_mse <= base_mse + 1e-6, "{corrected_mse} vs {base_mse}");
}

#[test]
fn train_all_preserves_order_and_rejects_duplicates() {
    let train = sine_windows(8, 4);
    let cfg = small_config();
    let single = train_all(&[StrategySpec::mo(4)], &train, &cfg).unwrap();
    assert_eq!(single.len(), 1);
    assert!(!single.fingerprint().is_empty());

    let dup = [StrategySpec::recmo(2), StrategySpec::recmo(2)];
    assert!(matches!(train_all(&dup, &train, &cfg), Err(Error::InvalidInput(_))));
    assert!(train_all(&[], &train, &cfg).is_err());

    let specs = enumerate_strategies(4).unwrap();
    let set = train_all(&specs, &train, &cfg).unwrap();
    assert_eq!(set.names(), ["mo", "rectify", "d1", "r1", "dirrec", "d2", "r2"]);
    assert_eq!(set.window(), 8);
    assert_eq!(set.horizon(), 4);
}

#[test]
fn failing_strategy_is_named() {
    // Targets this large overflow the squared loss.
    let inputs = Array2::from_shape_fn((30, 4), |(i, j)| (i + j) as f64 * 0.01);
    let targets = Array2::from_elem((30, 2), 1e200);
    let train = WindowedDataset::from_parts(inputs, targets, (0..30).collect()).unwrap();
    match train_all(&[StrategySpec::dirmo(1)], &train, &small_config()) {
        Err(Error::Strategy { name, source }) => {
            assert_eq!(name, "d1");
            assert!(matches!(*source, Error::Diverged { .. }));
        }
        other => panic!("expected a named strategy error, got {other:?}"),
    }
}

#[test]
fn enumerated_h20_set_on_mackey_glass_has_13_members() {
    use dystrat::data::{generate_mackey_glass, normalize, split, MackeyGlassParams, SplitSpec};
    let ts = normalize(&generate_mackey_glass(400, &MackeyGlassParams::default(), 0).unwrap()).unwrap();
    let (train, _) = split(&make_windows(&ts, 40, 20).unwrap(), &SplitSpec::default()).unwrap();
    let cfg = MlpConfig { max_epochs: 2, hidden_width: 8, ..MlpConfig::default() };
    let set = train_all(&enumerate_strategies(20).unwrap(), &train, &cfg).unwrap();
    assert_eq!(set.len(), 13);
}

#[test]
fn bundle_round_trip_and_subset() {
    let train = sine_windows(8, 4);
    let set = train_all(&enumerate_strategies(4).unwrap(), &train, &small_config()).unwrap();
    let mut bytes = Vec::new();
    set.write_bundle(&mut bytes).unwrap();
    let back = StrategySet::read_bundle(bytes.as_slice()).unwrap();
    assert_eq!(back, set);
    assert_eq!(
        back.forecast_all(train.inputs().view()).unwrap(),
        set.forecast_all(train.inputs().view()).unwrap()
    );

    let sub = set.subset(&[3, 0]).unwrap();
    assert_eq!(sub.names(), ["r1", "mo"]);
    assert_ne!(sub.fingerprint(), set.fingerprint());
    assert!(set.subset(&[0, 99]).is_err());
}
