//! Series construction and supervised windowing.
//!
//! A [`TimeSeries`] is turned into a [`WindowedDataset`] of `(x, y)` pairs
//! where `x` holds the `w` most recent values and `y` the `H` values that
//! follow. [`split`] then carves off a chronological evaluation tail.

mod generators;
mod ingest;

pub use generators::{
    generate_lorenz, generate_mackey_glass, generate_noisy_sine, LorenzParams, MackeyGlassParams,
};
pub use ingest::{load_csv, Column};

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a series came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesSource {
    SyntheticMackeyGlass,
    SyntheticLorenz,
    SyntheticSine,
    Csv,
}

/// A named univariate series of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    values: Vec<f64>,
    source: SeriesSource,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>, source: SeriesSource) -> Result<Self> {
        let name = name.into();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "series `{name}` has a non-finite value at position {pos}"
            )));
        }
        Ok(Self {
            name,
            values,
            source,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> SeriesSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Affine min-max scaling fitted on some reference range of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Option<Self> {
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        (min < max).then_some(Self { min, max })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

/// Min-max normalise the whole series onto `[0, 1]`.
pub fn normalize(ts: &TimeSeries) -> Result<TimeSeries> {
    let scale = MinMax::fit(&ts.values).ok_or_else(|| Error::DegenerateSeries(ts.name.clone()))?;
    Ok(normalize_with(ts, scale))
}

/// Apply a previously fitted scaling (e.g. one fitted on the training range only).
/// Values outside the fitted range map outside `[0, 1]`.
pub fn normalize_with(ts: &TimeSeries, scale: MinMax) -> TimeSeries {
    let values = ts.values.iter().map(|&v| scale.apply(v)).collect();
    TimeSeries {
        name: ts.name.clone(),
        values,
        source: ts.source,
    }
}

/// Aligned `(inputs, targets)` matrices produced by sliding a window over a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    inputs: Array2<f64>,
    targets: Array2<f64>,
    origin_indices: Vec<usize>,
}

impl WindowedDataset {
    /// Build from raw matrices. Row counts must agree.
    pub fn from_parts(
        inputs: Array2<f64>,
        targets: Array2<f64>,
        origin_indices: Vec<usize>,
    ) -> Result<Self> {
        if inputs.nrows() != targets.nrows() || inputs.nrows() != origin_indices.len() {
            return Err(Error::InvalidInput(format!(
                "row counts differ: inputs {}, targets {}, origins {}",
                inputs.nrows(),
                targets.nrows(),
                origin_indices.len()
            )));
        }
        if inputs.ncols() == 0 || targets.ncols() == 0 {
            return Err(Error::InvalidInput(
                "window and horizon must be positive".into(),
            ));
        }
        Ok(Self {
            inputs,
            targets,
            origin_indices,
        })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    pub fn input(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> ArrayView1<'_, f64> {
        self.targets.row(i)
    }

    pub fn origin_indices(&self) -> &[usize] {
        &self.origin_indices
    }

    /// Lag count `w`.
    pub fn window(&self) -> usize {
        self.inputs.ncols()
    }

    /// Horizon `H`.
    pub fn horizon(&self) -> usize {
        self.targets.ncols()
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Contiguous run of instances `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> WindowedDataset {
        WindowedDataset {
            inputs: self.inputs.slice(s![start..end, ..]).to_owned(),
            targets: self.targets.slice(s![start..end, ..]).to_owned(),
            origin_indices: self.origin_indices[start..end].to_vec(),
        }
    }
}

/// Slide a `w`-lag window over the series, pairing each with the next `horizon` values.
pub fn make_windows(ts: &TimeSeries, w: usize, horizon: usize) -> Result<WindowedDataset> {
    if w == 0 || horizon == 0 {
        return Err(Error::InvalidParameter(format!(
            "window ({w}) and horizon ({horizon}) must be positive"
        )));
    }
    let total = ts.len();
    let needed = w + horizon;
    if total < needed {
        return Err(Error::InvalidParameter(format!(
            "series `{}` has {total} values; windowing with w={w}, H={horizon} needs at least {needed}",
            ts.name
        )));
    }
    let count = total - needed + 1;
    let values = &ts.values;
    let inputs = Array2::from_shape_fn((count, w), |(i, j)| values[i + j]);
    let targets = Array2::from_shape_fn((count, horizon), |(i, j)| values[i + w + j]);
    WindowedDataset::from_parts(inputs, targets, (0..count).collect())
}

/// Train/evaluation partition policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of the non-evaluation instances used for training, in `(0, 1]`.
    pub train_fraction: f64,
    /// Share of all instances held out as the chronological tail, in `(0, 1)`.
    pub eval_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            eval_fraction: 0.10,
        }
    }
}

fn floor_share(n: usize, fraction: f64) -> usize {
    // absorb representation error such as 0.1 * 30 = 3.0000000000000004
    ((n as f64) * fraction + 1e-9).floor() as usize
}

/// Split into `(train, eval)`: eval is the final `eval_fraction` of instances,
/// train the first `train_fraction` of what remains.
pub fn split(ds: &WindowedDataset, spec: &SplitSpec) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train_fraction {} outside (0, 1]",
            spec.train_fraction
        )));
    }
    if !(spec.eval_fraction > 0.0 && spec.eval_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "eval_fraction {} outside (0, 1)",
            spec.eval_fraction
        )));
    }
    let total = ds.len();
    let n_eval = floor_share(total, spec.eval_fraction);
    if n_eval == 0 {
        return Err(Error::InvalidSplit(format!(
            "eval partition is empty ({total} instances x {})",
            spec.eval_fraction
        )));
    }
    let rest = total - n_eval;
    let n_train = floor_share(rest, spec.train_fraction);
    if n_train == 0 {
        return Err(Error::InvalidSplit(format!(
            "train partition is empty ({rest} instances x {})",
            spec.train_fraction
        )));
    }
    Ok((ds.slice(0, n_train), ds.slice(rest, total)))
}
