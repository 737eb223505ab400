//! Synthetic series: Mackey-Glass, Lorenz and noisy sine.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SeriesSource, TimeSeries};
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of `dy/dt = beta * y(t - tau) / (1 + y(t - tau)^exponent) - gamma * y(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MackeyGlassParams {
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    pub exponent: f64,
    /// Integration step. One sample is emitted per time unit, so `1/dt` must be an integer.
    pub dt: f64,
    /// Constant history `y(t)` for `t <= 0`. Drawn from the seed when absent.
    pub history: Option<f64>,
    /// Time units discarded before the first sample. Defaults to `10 * tau`.
    pub burn_in: Option<f64>,
}

impl Default for MackeyGlassParams {
    fn default() -> Self {
        Self {
            tau: 17.0,
            beta: 0.2,
            gamma: 0.1,
            exponent: 10.0,
            dt: 0.1,
            history: None,
            burn_in: None,
        }
    }
}

impl MackeyGlassParams {
    fn rhs(&self, y: f64, delayed: f64) -> f64 {
        self.beta * delayed / (1.0 + delayed.powf(self.exponent)) - self.gamma * y
    }
}

fn steps_per_unit(dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let steps = (1.0 / dt).round();
    if steps < 1.0 || (steps * dt - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "1/dt must be a whole number of steps, got dt={dt}"
        )));
    }
    Ok(steps as usize)
}

/// Grid solution of the delay equation: values and derivatives at `t_k = k * dt`.
struct DelayGrid {
    ys: Vec<f64>,
    fs: Vec<f64>,
    history: f64,
    delay_steps: f64,
    dt: f64,
}

impl DelayGrid {
    /// `y` at grid position `pos` (in steps, possibly fractional); cubic Hermite
    /// between grid points, constant history before zero.
    fn at(&self, pos: f64) -> f64 {
        if pos <= 0.0 {
            return self.history;
        }
        let j = pos.floor();
        let theta = pos - j;
        let j = j as usize;
        if theta == 0.0 {
            return self.ys[j];
        }
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[j]
            + h10 * self.dt * self.fs[j]
            + h01 * self.ys[j + 1]
            + h11 * self.dt * self.fs[j + 1]
    }

    fn delayed(&self, step: usize, offset: f64) -> f64 {
        self.at(step as f64 + offset - self.delay_steps)
    }
}

/// Integrate Mackey-Glass with fixed-step RK4, sampling once per time unit after burn-in.
pub fn generate_mackey_glass(n: usize, params: &MackeyGlassParams, seed: u64) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::InvalidParameter("instance count must be positive".into()));
    }
    let per_unit = steps_per_unit(params.dt)?;
    let dt = params.dt;
    if !(params.tau >= dt) {
        return Err(Error::InvalidParameter(format!(
            "tau must be at least dt ({dt}), got {}",
            params.tau
        )));
    }
    let burn_in = params.burn_in.unwrap_or(10.0 * params.tau);
    if !(burn_in >= 0.0) {
        return Err(Error::InvalidParameter(format!("burn-in must be non-negative, got {burn_in}")));
    }
    let history = match params.history {
        Some(h) => h,
        None => seed::derived_rng(seed, &["mackey-glass", "history"]).random_range(0.5..1.3),
    };

    let burn_samples = burn_in.ceil() as usize;
    let total_steps = (burn_samples + n - 1) * per_unit;
    let mut grid = DelayGrid {
        ys: Vec::with_capacity(total_steps + 1),
        fs: Vec::with_capacity(total_steps + 1),
        history,
        delay_steps: params.tau / dt,
        dt,
    };
    grid.ys.push(history);
    grid.fs.push(params.rhs(history, grid.delayed(0, 0.0)));

    for k in 0..total_steps {
        let y = grid.ys[k];
        let mid = grid.delayed(k, 0.5);
        let k1 = grid.fs[k];
        let k2 = params.rhs(y + 0.5 * dt * k1, mid);
        let k3 = params.rhs(y + 0.5 * dt * k2, mid);
        let k4 = params.rhs(y + dt * k3, grid.delayed(k, 1.0));
        let next = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        grid.ys.push(next);
        let f_next = params.rhs(next, grid.delayed(k + 1, 0.0));
        grid.fs.push(f_next);
    }

    let values: Vec<f64> = (0..n)
        .map(|i| grid.ys[(burn_samples + i) * per_unit])
        .collect();
    TimeSeries::new("mackey-glass", values, SeriesSource::SyntheticMackeyGlass)
}

/// Lorenz system parameters; the emitted series is the x coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    /// Integration steps between emitted samples.
    pub steps_per_sample: usize,
    /// Time units discarded before the first sample.
    pub burn_in: f64,
    /// Starting state. Drawn near the attractor from the seed when absent.
    pub initial: Option<[f64; 3]>,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            steps_per_sample: 5,
            burn_in: 20.0,
            initial: None,
        }
    }
}

fn lorenz_rhs(p: &LorenzParams, s: [f64; 3]) -> [f64; 3] {
    [
        p.sigma * (s[1] - s[0]),
        s[0] * (p.rho - s[2]) - s[1],
        s[0] * s[1] - p.beta * s[2],
    ]
}

fn rk4_step(p: &LorenzParams, s: [f64; 3]) -> [f64; 3] {
    let dt = p.dt;
    let shift = |a: [f64; 3], k: [f64; 3], h: f64| [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2]];
    let k1 = lorenz_rhs(p, s);
    let k2 = lorenz_rhs(p, shift(s, k1, 0.5 * dt));
    let k3 = lorenz_rhs(p, shift(s, k2, 0.5 * dt));
    let k4 = lorenz_rhs(p, shift(s, k3, dt));
    std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

pub fn generate_lorenz(n: usize, params: &LorenzParams, seed: u64) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::InvalidParameter("instance count must be positive".into()));
    }
    if !(params.dt > 0.0 && params.dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {}", params.dt)));
    }
    if params.steps_per_sample == 0 {
        return Err(Error::InvalidParameter("steps_per_sample must be positive".into()));
    }
    if !(params.burn_in >= 0.0) || ![params.sigma, params.rho, params.beta].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("Lorenz parameters must be finite, burn-in non-negative".into()));
    }
    let mut state = match params.initial {
        Some(s) => s,
        None => {
            let mut rng = seed::derived_rng(seed, &["lorenz", "initial"]);
            // leaves the origin's neighbourhood onto the attractor within a few time units
            [
                1.0 + rng.random_range(-0.5..0.5),
                1.0 + rng.random_range(-0.5..0.5),
                1.0 + rng.random_range(-0.5..0.5),
            ]
        }
    };
    let burn_steps = (params.burn_in / params.dt).round() as usize;
    for _ in 0..burn_steps {
        state = rk4_step(params, state);
    }
    let mut values = Vec::with_capacity(n);
    values.push(state[0]);
    while values.len() < n {
        for _ in 0..params.steps_per_sample {
            state = rk4_step(params, state);
        }
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "Lorenz integration blew up; reduce dt".into(),
            ));
        }
        values.push(state[0]);
    }
    TimeSeries::new("lorenz", values, SeriesSource::SyntheticLorenz)
}

/// `sin(2*pi*t/period)` for `t = 0..n` plus gaussian noise with std `noise_fraction`.
pub fn generate_noisy_sine(n: usize, period: f64, noise_fraction: f64, seed: u64) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::InvalidParameter("instance count must be positive".into()));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
    }
    if !(noise_fraction >= 0.0 && noise_fraction.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise fraction must be non-negative, got {noise_fraction}"
        )));
    }
    let mut rng = seed::derived_rng(seed, &["sine", "noise"]);
    let noise = Normal::new(0.0, noise_fraction)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let values = (0..n)
        .map(|t| {
            let clean = (std::f64::consts::TAU * t as f64 / period).sin();
            if noise_fraction > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            }
        })
        .collect();
    TimeSeries::new("sine", values, SeriesSource::SyntheticSine)
}
