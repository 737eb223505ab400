use dystrat::data::*;
use proptest::prelude::*;

/// Mackey-Glass by fourth-order Adams-Bashforth on a fine grid where the delay
/// is a whole number of steps, so no interpolation is needed.
fn mackey_glass_ab4(history: f64, samples: usize, burn_units: usize) -> Vec<f64> {
    let (tau, beta, gamma, p) = (17.0, 0.2, 0.1, 10.0);
    let per_unit = 1000;
    let h = 1.0 / per_unit as f64;
    let delay = (tau * per_unit as f64) as usize;
    let total = (burn_units + samples) * per_unit;
    let at = |ys: &[f64], k: isize| if k < 0 { history } else { ys[k as usize] };
    let f = |y: f64, d: f64| beta * d / (1.0 + d.powf(p)) - gamma * y;

    let mut ys = vec![history];
    let mut fs = vec![f(history, history)];
    for k in 0..total {
        let y = ys[k];
        let next = if k < 3 {
            // Delayed values here all come from the constant history.
            let k1 = f(y, history);
            let k2 = f(y + 0.5 * h * k1, history);
            let k3 = f(y + 0.5 * h * k2, history);
            let k4 = f(y + h * k3, history);
            y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        } else {
            y + h / 24.0 * (55.0 * fs[k] - 59.0 * fs[k - 1] + 37.0 * fs[k - 2] - 9.0 * fs[k - 3])
        };
        ys.push(next);
        let d = at(&ys, (k + 1) as isize - delay as isize);
        fs.push(f(next, d));
    }
    (0..samples).map(|i| ys[(burn_units + i) * per_unit]).collect()
}

#[test]
fn mackey_glass_agrees_with_a_fine_multistep_integration() {
    let params = MackeyGlassParams {
        history: Some(1.2),
        ..MackeyGlassParams::default()
    };
    let ours = generate_mackey_glass(1000, &params, 0).unwrap();
    let reference = mackey_glass_ab4(1.2, 1000, 170);
    let rms = (ours.values().iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1000.0).sqrt();
    assert!(rms < 1e-3, "rms {rms}");
    assert!(reference.iter().all(|&v| v > 0.1 && v < 1.6));
}

#[test]
fn mackey_glass_default_stays_in_band() {
    for seed in 0..3 {
        let ts = generate_mackey_glass(10_000, &MackeyGlassParams::default(), seed).unwrap();
        assert_eq!(ts.len(), 10_000);
        assert!(ts.values().iter().all(|&v| v > 0.1 && v < 1.6), "seed {seed}");
    }
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Long second-order (Heun) integration used to place the attractor's x variance.
fn lorenz_heun_x(units: f64) -> Vec<f64> {
    let (s, r, b) = (10.0, 28.0, 8.0 / 3.0);
    let h = 1e-3;
    let f = |v: [f64; 3]| [s * (v[1] - v[0]), v[0] * (r - v[2]) - v[1], v[0] * v[1] - b * v[2]];
    let mut v = [1.0, 1.0, 1.0];
    let mut xs = Vec::new();
    let steps = (units / h) as usize;
    for k in 0..steps {
        let k1 = f(v);
        let p = [v[0] + h * k1[0], v[1] + h * k1[1], v[2] + h * k1[2]];
        let k2 = f(p);
        v = std::array::from_fn(|i| v[i] + 0.5 * h * (k1[i] + k2[i]));
        // Skip the transient, then keep one sample per 0.05 time units.
        if k as f64 * h > 20.0 && k % 50 == 0 {
            xs.push(v[0]);
        }
    }
    xs
}

#[test]
fn lorenz_x_variance_sits_in_the_attractor_band() {
    let long = variance(&lorenz_heun_x(2000.0));
    assert!((40.0..=80.0).contains(&long), "reference variance {long}");
    for seed in 0..5 {
        let ts = generate_lorenz(2000, &LorenzParams::default(), seed).unwrap();
        let v = variance(ts.values());
        assert!((40.0..=80.0).contains(&v), "seed {seed}: variance {v}");
    }
}

#[test]
fn csv_series_windows_and_split_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let mut text = String::from("date,OT\n");
    for i in 0..100 {
        text.push_str(&format!("d{i},{}\n", i as f64 * 0.5));
    }
    std::fs::write(&path, text).unwrap();
    let ts = normalize(&load_csv(&path, &Column::from("OT")).unwrap()).unwrap();
    let ds = make_windows(&ts, 10, 20).unwrap();
    assert_eq!(ds.len(), 71);
    let (train, eval) = split(&ds, &SplitSpec::default()).unwrap();
    assert_eq!(eval.len(), 7);
    assert_eq!(train.len(), 48);
    assert!(train.origin_indices().last() < eval.origin_indices().first());
}

proptest! {
    #[test]
    fn generators_repeat_bitwise(seed in 0u64..1000, n in 1usize..300) {
        let a = generate_mackey_glass(n, &MackeyGlassParams::default(), seed).unwrap();
        let b = generate_mackey_glass(n, &MackeyGlassParams::default(), seed).unwrap();
        prop_assert_eq!(a, b);
        let a = generate_lorenz(n, &LorenzParams::default(), seed).unwrap();
        let b = generate_lorenz(n, &LorenzParams::default(), seed).unwrap();
        prop_assert_eq!(a, b);
        let a = generate_noisy_sine(n, 12.0, 0.05, seed).unwrap();
        let b = generate_noisy_sine(n, 12.0, 0.05, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
