//! Multi-step forecasting strategies built from one or more base regressors.
//!
//! | kind      | models       | forecast                                              |
//! |-----------|--------------|-------------------------------------------------------|
//! | `mo`      | 1 (`w -> H`) | single prediction                                     |
//! | `r{s}`    | 1 (`w -> s`) | roll a buffer forward `s` values at a time            |
//! | `d{s}`    | `H/s`        | concatenation of the chunk models                     |
//! | `dirrec`  | `H`          | model `i` sees the window plus forecasts `0..i`       |
//! | `rectify` | 2            | one-step recursive base plus a direct residual model  |
//!
//! RECMO and DIRMO with `s = H` are the multi-output strategy; they train
//! under the `mo` seed key and forecast identically to it.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::models::{train_mlp, MlpConfig, TrainedRegressor};
use crate::seed;

/// A trained map from a feature vector to a fixed-length output.
pub trait Regressor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;

    fn predict_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((inputs.nrows(), self.output_dim()));
        for (row, mut dst) in inputs.rows().into_iter().zip(out.rows_mut()) {
            let pred = self.predict(&row.to_vec())?;
            dst.assign(&ndarray::ArrayView1::from(&pred));
        }
        Ok(out)
    }
}

impl Regressor for TrainedRegressor {
    fn input_dim(&self) -> usize {
        TrainedRegressor::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        TrainedRegressor::output_dim(self)
    }

    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        TrainedRegressor::predict(self, input)
    }

    fn predict_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        TrainedRegressor::predict_batch(self, inputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Mo,
    Recmo,
    Dirmo,
    Dirrec,
    Rectify,
}

/// Declarative identity of a strategy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategySpec {
    kind: StrategyKind,
    sigma: Option<usize>,
    display_name: String,
}

impl StrategySpec {
    pub fn mo(horizon: usize) -> Self {
        Self {
            kind: StrategyKind::Mo,
            sigma: Some(horizon),
            display_name: "mo".into(),
        }
    }

    pub fn recmo(sigma: usize) -> Self {
        Self {
            kind: StrategyKind::Recmo,
            sigma: Some(sigma),
            display_name: format!("r{sigma}"),
        }
    }

    pub fn dirmo(sigma: usize) -> Self {
        Self {
            kind: StrategyKind::Dirmo,
            sigma: Some(sigma),
            display_name: format!("d{sigma}"),
        }
    }

    pub fn dirrec() -> Self {
        Self {
            kind: StrategyKind::Dirrec,
            sigma: None,
            display_name: "dirrec".into(),
        }
    }

    pub fn rectify() -> Self {
        Self {
            kind: StrategyKind::Rectify,
            sigma: None,
            display_name: "rectify".into(),
        }
    }

    /// Parse a display name such as `mo`, `rectify`, `dirrec`, `r4` or `d10`.
    pub fn parse(name: &str, horizon: usize) -> Result<Self> {
        let spec = match name {
            "mo" => Self::mo(horizon),
            "dirrec" => Self::dirrec(),
            "rectify" | "rc" => Self::rectify(),
            _ => {
                let (prefix, digits) = name.split_at(name.len().min(1));
                let sigma: usize = digits
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("unknown strategy `{name}`")))?;
                match prefix {
                    "r" => Self::recmo(sigma),
                    "d" => Self::dirmo(sigma),
                    _ => return Err(Error::InvalidSpec(format!("unknown strategy `{name}`"))),
                }
            }
        };
        spec.validate(horizon)?;
        Ok(spec)
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn sigma(&self) -> Option<usize> {
        self.sigma
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        match (self.kind, self.sigma) {
            (StrategyKind::Mo, Some(s)) if s == horizon => Ok(()),
            (StrategyKind::Mo, _) => Err(Error::InvalidSpec(format!(
                "mo must have sigma equal to the horizon {horizon}"
            ))),
            (StrategyKind::Recmo | StrategyKind::Dirmo, Some(s)) => {
                if s == 0 || s > horizon || horizon % s != 0 {
                    Err(Error::InvalidSpec(format!(
                        "{}: sigma {s} does not divide horizon {horizon}",
                        self.display_name
                    )))
                } else {
                    Ok(())
                }
            }
            (StrategyKind::Recmo | StrategyKind::Dirmo, None) => Err(Error::InvalidSpec(format!(
                "{} requires sigma",
                self.display_name
            ))),
            (StrategyKind::Dirrec | StrategyKind::Rectify, None) => Ok(()),
            (StrategyKind::Dirrec | StrategyKind::Rectify, Some(_)) => Err(Error::InvalidSpec(
                format!("{} takes no sigma", self.display_name),
            )),
        }
    }

    /// Whether this spec is the multi-output strategy in disguise.
    fn collapses_to_mo(&self, horizon: usize) -> bool {
        match self.kind {
            StrategyKind::Mo => true,
            StrategyKind::Recmo | StrategyKind::Dirmo => self.sigma == Some(horizon),
            _ => false,
        }
    }

    /// Name that keys per-model seeds.
    fn seed_key(&self, horizon: usize) -> &str {
        if self.collapses_to_mo(horizon) {
            "mo"
        } else {
            &self.display_name
        }
    }

    /// Number of base models the strategy trains.
    pub fn model_count(&self, horizon: usize) -> usize {
        if self.collapses_to_mo(horizon) {
            return 1;
        }
        match self.kind {
            StrategyKind::Mo | StrategyKind::Recmo => 1,
            StrategyKind::Dirmo => horizon / self.sigma.unwrap_or(horizon),
            StrategyKind::Dirrec => horizon,
            StrategyKind::Rectify => 2,
        }
    }

    /// Whether any part of the forecast is fed back into a model.
    pub fn is_recursive(&self, horizon: usize) -> bool {
        matches!(self.kind, StrategyKind::Recmo | StrategyKind::Rectify) && !self.collapses_to_mo(horizon)
    }

    /// Whether the forecast comes from direct models alone (MO and DIRMO).
    pub fn is_direct(&self, horizon: usize) -> bool {
        self.collapses_to_mo(horizon) || self.kind == StrategyKind::Dirmo
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name)
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Every candidate strategy for a horizon: `mo`, `rectify`, then `d{s}`/`r{s}`
/// for each proper divisor `s` ascending, with `dirrec` following the `s = 1` pair.
pub fn enumerate_strategies(horizon: usize) -> Result<Vec<StrategySpec>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut specs = vec![StrategySpec::mo(horizon), StrategySpec::rectify()];
    for sigma in divisors(horizon).into_iter().filter(|&s| s < horizon) {
        specs.push(StrategySpec::dirmo(sigma));
        specs.push(StrategySpec::recmo(sigma));
        if sigma == 1 {
            specs.push(StrategySpec::dirrec());
        }
    }
    if horizon == 1 {
        specs.push(StrategySpec::dirrec());
    }
    Ok(specs)
}

/// A strategy together with its fitted base models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedStrategy<M = TrainedRegressor> {
    spec: StrategySpec,
    window: usize,
    horizon: usize,
    models: Vec<M>,
}

impl<M: Regressor> TrainedStrategy<M> {
    /// Assemble from already-fitted models, checking their shapes against `spec`.
    pub fn from_parts(spec: StrategySpec, window: usize, horizon: usize, models: Vec<M>) -> Result<Self> {
        spec.validate(horizon)?;
        let expected = spec.model_count(horizon);
        if models.len() != expected {
            return Err(Error::InvalidSpec(format!(
                "{spec} needs {expected} models, got {}",
                models.len()
            )));
        }
        let shape = |i: usize| -> (usize, usize) {
            if spec.collapses_to_mo(horizon) {
                return (window, horizon);
            }
            match spec.kind {
                StrategyKind::Mo => (window, horizon),
                StrategyKind::Recmo | StrategyKind::Dirmo => (window, spec.sigma.unwrap_or(horizon)),
                StrategyKind::Dirrec => (window + i, 1),
                StrategyKind::Rectify if i == 0 => (window, 1),
                StrategyKind::Rectify => (window, horizon),
            }
        };
        for (i, m) in models.iter().enumerate() {
            let (din, dout) = shape(i);
            if m.input_dim() != din || m.output_dim() != dout {
                return Err(Error::InvalidSpec(format!(
                    "{spec} model {i} is {}->{}, expected {din}->{dout}",
                    m.input_dim(),
                    m.output_dim()
                )));
            }
        }
        Ok(Self {
            spec,
            window,
            horizon,
            models,
        })
    }

    pub fn spec(&self) -> &StrategySpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        self.spec.display_name()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn models(&self) -> &[M] {
        &self.models
    }

    /// Forecast the next `H` values from a `w`-length window.
    pub fn forecast(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.window {
            return Err(Error::InvalidInput(format!(
                "{}: expected a window of {}, got {}",
                self.spec,
                self.window,
                x.len()
            )));
        }
        let h = self.horizon;
        if self.spec.collapses_to_mo(h) {
            let mut out = self.models[0].predict(x)?;
            out.truncate(h);
            return Ok(out);
        }
        let out = match self.spec.kind {
            StrategyKind::Mo => self.models[0].predict(x)?,
            StrategyKind::Recmo => recursive_forecast(&self.models[0], x, h)?,
            StrategyKind::Dirmo => {
                let mut out = Vec::with_capacity(h);
                for m in &self.models {
                    out.extend(m.predict(x)?);
                }
                out
            }
            StrategyKind::Dirrec => {
                let mut features = x.to_vec();
                for m in &self.models {
                    let p = m.predict(&features)?;
                    features.extend(p);
                }
                features.split_off(self.window)
            }
            StrategyKind::Rectify => {
                let base = recursive_forecast(&self.models[0], x, h)?;
                let correction = self.models[1].predict(x)?;
                base.iter().zip(&correction).map(|(b, c)| b + c).collect()
            }
        };
        debug_assert_eq!(out.len(), h);
        Ok(out)
    }

    /// Row-wise forecasts; row `i` equals `forecast(inputs.row(i))`.
    pub fn forecast_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((inputs.nrows(), self.horizon));
        for (row, mut dst) in inputs.rows().into_iter().zip(out.rows_mut()) {
            let f = self.forecast(&row.to_vec())?;
            dst.assign(&ndarray::ArrayView1::from(&f));
        }
        Ok(out)
    }
}

/// Roll a buffer seeded with `x` forward, always feeding the last `w` values to
/// the model and appending its `sigma` outputs, until `H` values are produced.
fn recursive_forecast<M: Regressor>(model: &M, x: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let w = x.len();
    let mut buffer = Vec::with_capacity(w + horizon + model.output_dim());
    buffer.extend_from_slice(x);
    while buffer.len() < w + horizon {
        let next = model.predict(&buffer[buffer.len() - w..])?;
        buffer.extend(next);
    }
    buffer.truncate(w + horizon);
    Ok(buffer.split_off(w))
}

fn component_config(spec: &StrategySpec, horizon: usize, index: usize, cfg: &MlpConfig) -> MlpConfig {
    cfg.with_seed(seed::derive_seed(cfg.seed, &[spec.seed_key(horizon), &index.to_string()]))
}

fn target_columns(train: &WindowedDataset, start: usize, end: usize) -> Array2<f64> {
    train.targets().slice(s![.., start..end]).to_owned()
}

/// Train one independent component of a direct or multi-output strategy.
/// DIRMO component `i` predicts target columns `[i*s, (i+1)*s)`.
pub fn train_component(
    spec: &StrategySpec,
    index: usize,
    train: &WindowedDataset,
    cfg: &MlpConfig,
) -> Result<TrainedRegressor> {
    let h = train.horizon();
    spec.validate(h)?;
    if spec.collapses_to_mo(h) {
        if index != 0 {
            return Err(Error::InvalidParameter(format!("{spec} has a single model")));
        }
        return train_mlp(train.inputs(), train.targets(), &component_config(spec, h, 0, cfg));
    }
    match spec.kind {
        StrategyKind::Recmo if index == 0 => {
            let sigma = spec.sigma.unwrap_or(h);
            train_mlp(train.inputs(), &target_columns(train, 0, sigma), &component_config(spec, h, 0, cfg))
        }
        StrategyKind::Dirmo if index < spec.model_count(h) => {
            let sigma = spec.sigma.unwrap_or(h);
            let targets = target_columns(train, index * sigma, (index + 1) * sigma);
            train_mlp(train.inputs(), &targets, &component_config(spec, h, index, cfg))
        }
        StrategyKind::Dirrec | StrategyKind::Rectify => Err(Error::InvalidParameter(format!(
            "{spec} components are chained and cannot be trained alone"
        ))),
        _ => Err(Error::InvalidParameter(format!("{spec} has no component {index}"))),
    }
}

/// Fit every base model a strategy needs on the training windows.
pub fn train_strategy(spec: &StrategySpec, train: &WindowedDataset, cfg: &MlpConfig) -> Result<TrainedStrategy> {
    let (w, h) = (train.window(), train.horizon());
    spec.validate(h)?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let models = if spec.collapses_to_mo(h) || spec.kind == StrategyKind::Recmo {
        vec![train_component(spec, 0, train, cfg)?]
    } else {
        match spec.kind {
            StrategyKind::Dirmo => (0..spec.model_count(h))
                .map(|i| train_component(spec, i, train, cfg))
                .collect::<Result<Vec<_>>>()?,
            StrategyKind::Dirrec => {
                let mut features = train.inputs().clone();
                let mut models = Vec::with_capacity(h);
                for i in 0..h {
                    let m = train_mlp(&features, &target_columns(train, i, i + 1), &component_config(spec, h, i, cfg))?;
                    let pred = m.predict_batch(features.view())?;
                    features = concatenate(Axis(1), &[features.view(), pred.view()])
                        .map_err(|e| Error::InvalidInput(e.to_string()))?;
                    models.push(m);
                }
                models
            }
            StrategyKind::Rectify => {
                let base = train_mlp(train.inputs(), &target_columns(train, 0, 1), &component_config(spec, h, 0, cfg))?;
                let mut residuals = train.targets().clone();
                for (i, mut row) in residuals.rows_mut().into_iter().enumerate() {
                    let f = recursive_forecast(&base, &train.input(i).to_vec(), h)?;
                    row.iter_mut().zip(&f).for_each(|(r, v)| *r -= v);
                }
                let correction = train_mlp(train.inputs(), &residuals, &component_config(spec, h, 1, cfg))?;
                vec![base, correction]
            }
            StrategyKind::Mo | StrategyKind::Recmo => unreachable!("handled above"),
        }
    };
    TrainedStrategy::from_parts(spec.clone(), w, h, models)
}

/// Candidate strategies sharing one window and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySet<M = TrainedRegressor> {
    strategies: Vec<TrainedStrategy<M>>,
    window: usize,
    horizon: usize,
    fingerprint: String,
}

impl<M: Regressor> StrategySet<M> {
    pub fn new(strategies: Vec<TrainedStrategy<M>>, fingerprint: impl Into<String>) -> Result<Self> {
        let first = strategies
            .first()
            .ok_or_else(|| Error::InvalidInput("a strategy set needs at least one strategy".into()))?;
        let (window, horizon) = (first.window, first.horizon);
        let mut seen = HashSet::new();
        for s in &strategies {
            if s.window != window || s.horizon != horizon {
                return Err(Error::InvalidInput(format!(
                    "{} has (w={}, H={}), set has (w={window}, H={horizon})",
                    s.spec, s.window, s.horizon
                )));
            }
            if !seen.insert(s.name().to_string()) {
                return Err(Error::InvalidInput(format!("duplicate strategy `{}`", s.name())));
            }
        }
        Ok(Self {
            strategies,
            window,
            horizon,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn strategies(&self) -> &[TrainedStrategy<M>] {
        &self.strategies
    }

    pub fn get(&self, index: usize) -> Option<&TrainedStrategy<M>> {
        self.strategies.get(index)
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn names(&self) -> Vec<&str> {
        self.strategies.iter().map(|s| s.name()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.strategies.iter().position(|s| s.name() == name)
    }

    /// Forecasts of every member over every row: one `rows x H` matrix per strategy.
    pub fn forecast_all(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>>
    where
        M: Sync,
    {
        if inputs.ncols() != self.window {
            return Err(Error::InvalidInput(format!(
                "strategy set expects windows of {}, got {}",
                self.window,
                inputs.ncols()
            )));
        }
        self.strategies
            .par_iter()
            .map(|s| s.forecast_batch(inputs))
            .collect()
    }
}

impl<M: Regressor + Clone> StrategySet<M> {
    /// A new set holding the members at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let strategies = indices
            .iter()
            .map(|&i| {
                self.strategies
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("no strategy at index {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let names: Vec<&str> = strategies.iter().map(|s| s.name()).collect();
        let fingerprint = seed::digest_hex(format!("{}|{}", self.fingerprint, names.join(",")).as_bytes());
        Self::new(strategies, fingerprint)
    }
}

impl StrategySet<TrainedRegressor> {
    /// Write as a CBOR bundle.
    pub fn write_bundle<W: Write>(&self, writer: W) -> Result<()> {
        ciborium::into_writer(self, writer).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn read_bundle<R: Read>(reader: R) -> Result<Self> {
        let set: Self = ciborium::from_reader(reader).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::new(set.strategies, set.fingerprint)
    }
}

/// Fingerprint binding a trained set to its config and training data.
pub fn training_fingerprint(specs: &[StrategySpec], train: &WindowedDataset, cfg: &MlpConfig) -> String {
    let mut bytes = serde_json::to_vec(cfg).expect("config serializes");
    for spec in specs {
        bytes.extend_from_slice(spec.display_name().as_bytes());
        bytes.push(b',');
    }
    bytes.extend_from_slice(&(train.window() as u64).to_le_bytes());
    bytes.extend_from_slice(&(train.horizon() as u64).to_le_bytes());
    for v in train.inputs().iter().chain(train.targets().iter()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    seed::digest_hex(&bytes)
}

/// Train every spec on the same windows. Order is preserved.
pub fn train_all(specs: &[StrategySpec], train: &WindowedDataset, cfg: &MlpConfig) -> Result<StrategySet> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("no strategies to train".into()));
    }
    let mut seen = HashSet::new();
    for spec in specs {
        if !seen.insert(spec.display_name()) {
            return Err(Error::InvalidInput(format!("duplicate strategy `{spec}`")));
        }
        spec.validate(train.horizon())?;
    }
    let strategies = specs
        .par_iter()
        .map(|spec| {
            train_strategy(spec, train, cfg).map_err(|e| Error::Strategy {
                name: spec.display_name().to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StrategySet::new(strategies, training_fingerprint(specs, train, cfg))
}
