//! Config-driven experiments: dataset, strategies, selectors, reports.
//!
//! Every repeat `r` runs with seed `base_seed + r`. That seed drives the data
//! generator, the forecaster initializations and the seeded classifiers, so a
//! config plus base seed fully determines every report.

mod emit;
mod studies;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_lorenz, generate_mackey_glass, generate_noisy_sine, load_csv, make_windows, normalize, normalize_with,
    split, Column, LorenzParams, MackeyGlassParams, MinMax, SplitSpec, TimeSeries, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::eval::{EvaluationReport, LossMatrix, Metric, ReportMetadata};
use crate::models::MlpConfig;
use crate::seed::{derive_seed, digest_hex};
use crate::selector::{dispatch_forecasts, labels_from_forecasts, train_selector, ClassifierConfig, StrategyLabels, TrainedSelector};
use crate::strategies::{enumerate_strategies, train_all, StrategySet, StrategySpec};

pub use emit::{emit, emit_sweep, read_sidecar, report_file_name, sidecar_file_name, EmitOptions};
pub use studies::{
    ablate_gstar, quantile, rank_table, subset_curve, summarize_ablation, summarize_subsets, sweep, AblationResult,
    AblationRow, AblationSummary, RankTable, RestrictedPool, RestrictedResult, SubsetCurve, SubsetCurveConfig,
    SubsetPoint, SubsetSample, SweepResult,
};

/// Where the series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    MackeyGlass {
        #[serde(default = "default_length")]
        n: usize,
        #[serde(default)]
        params: MackeyGlassParams,
    },
    Lorenz {
        #[serde(default = "default_length")]
        n: usize,
        #[serde(default)]
        params: LorenzParams,
    },
    NoisySine {
        #[serde(default = "default_length")]
        n: usize,
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default = "default_noise")]
        noise_fraction: f64,
    },
    Csv {
        path: PathBuf,
        column: Column,
    },
}

fn default_length() -> usize {
    10_000
}

fn default_period() -> f64 {
    50.0
}

fn default_noise() -> f64 {
    0.05
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::MackeyGlass {
            n: default_length(),
            params: MackeyGlassParams::default(),
        }
    }
}

impl DatasetSpec {
    /// Parse a command-line shorthand: `mackey-glass`, `lorenz`, `sine`, or
    /// `path.csv[:column]`.
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "mackey-glass" | "mg" => Ok(Self::default()),
            "lorenz" => Ok(Self::Lorenz {
                n: default_length(),
                params: LorenzParams::default(),
            }),
            "sine" | "noisy-sine" => Ok(Self::NoisySine {
                n: default_length(),
                period: default_period(),
                noise_fraction: default_noise(),
            }),
            other => {
                let (path, column) = match other.rsplit_once(':') {
                    Some((p, c)) if p.ends_with(".csv") => (p, Column::from(c)),
                    _ => (other, Column::Index(0)),
                };
                if !path.ends_with(".csv") {
                    return Err(Error::Config(format!(
                        "unknown dataset `{other}`; expected mackey-glass, lorenz, sine or a .csv path"
                    )));
                }
                Ok(Self::Csv {
                    path: PathBuf::from(path),
                    column,
                })
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::MackeyGlass { .. } => "mackey-glass".into(),
            Self::Lorenz { .. } => "lorenz".into(),
            Self::NoisySine { .. } => "noisy-sine".into(),
            Self::Csv { path, column } => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                format!("{stem}:{column}")
            }
        }
    }

    /// The raw series for one seed. CSV data ignores the seed.
    pub fn load(&self, seed: u64) -> Result<TimeSeries> {
        match self {
            Self::MackeyGlass { n, params } => generate_mackey_glass(*n, params, seed),
            Self::Lorenz { n, params } => generate_lorenz(*n, params, seed),
            Self::NoisySine {
                n,
                period,
                noise_fraction,
            } => generate_noisy_sine(*n, *period, *noise_fraction, seed),
            Self::Csv { path, column } => load_csv(path, column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Min and max of the whole series.
    #[default]
    Global,
    /// Min and max of the values that training windows touch.
    TrainRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GStarSplit {
    #[default]
    Eval,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub horizon: usize,
    /// Window length as a multiple of the horizon.
    pub window_multiplier: usize,
    pub train_fraction: f64,
    pub eval_fraction: f64,
    pub normalization: Normalization,
    pub mlp: MlpConfig,
    pub classifiers: Vec<ClassifierConfig>,
    /// Reported metrics. The first one labels instances and drives relative errors.
    pub metrics: Vec<Metric>,
    pub repeats: usize,
    pub base_seed: u64,
    /// Keep only these strategy names, in enumeration order.
    pub strategy_filter: Option<Vec<String>>,
    /// Share of the training windows, taken from the end, reserved for the
    /// selector instead of the forecasters. `None` trains both on all of them.
    pub selector_holdout: Option<f64>,
    pub ablate_gstar: bool,
    pub gstar_split: GStarSplit,
    pub subset_curve: Option<SubsetCurveConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            horizon: 20,
            window_multiplier: 2,
            train_fraction: 0.75,
            eval_fraction: 0.10,
            normalization: Normalization::Global,
            mlp: MlpConfig::default(),
            classifiers: ClassifierConfig::all_defaults(),
            metrics: Metric::ALL.to_vec(),
            repeats: 5,
            base_seed: 0,
            strategy_filter: None,
            selector_holdout: None,
            ablate_gstar: false,
            gstar_split: GStarSplit::Eval,
            subset_curve: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn window(&self) -> usize {
        self.window_multiplier * self.horizon
    }

    pub fn primary_metric(&self) -> Metric {
        self.metrics.first().copied().unwrap_or_default()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            eval_fraction: self.eval_fraction,
        }
    }

    /// Short stable digest of the whole config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        digest_hex(&json)[..12].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.horizon == 0 || self.window_multiplier == 0 {
            return bad("horizon and window_multiplier must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction {} outside (0, 1]", self.train_fraction));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad(format!("eval_fraction {} outside (0, 1)", self.eval_fraction));
        }
        if let Some(h) = self.selector_holdout {
            if !(h > 0.0 && h < 1.0) {
                return bad(format!("selector_holdout {h} outside (0, 1)"));
            }
        }
        if self.metrics.is_empty() {
            return bad("at least one metric is required".into());
        }
        for (i, m) in self.metrics.iter().enumerate() {
            if self.metrics[..i].contains(m) {
                return bad(format!("metric {m} listed twice"));
            }
        }
        let mut names = Vec::new();
        for c in &self.classifiers {
            c.validate(self.window())?;
            if names.contains(&c.column_name()) {
                return bad(format!("classifier {} listed twice", c.column_name()));
            }
            names.push(c.column_name());
        }
        self.strategy_specs()?;
        Ok(())
    }

    /// Enumerated strategies after the optional filter.
    pub fn strategy_specs(&self) -> Result<Vec<StrategySpec>> {
        let all = enumerate_strategies(self.horizon)?;
        let Some(filter) = &self.strategy_filter else {
            return Ok(all);
        };
        for name in filter {
            if !all.iter().any(|s| s.display_name() == name) {
                return Err(Error::Config(format!(
                    "strategy_filter names `{name}`, which is not a candidate for H={}",
                    self.horizon
                )));
            }
        }
        let kept: Vec<StrategySpec> = all.into_iter().filter(|s| filter.iter().any(|n| n == s.display_name())).collect();
        if kept.is_empty() {
            return Err(Error::Config("strategy_filter keeps no strategies".into()));
        }
        Ok(kept)
    }
}

/// Wall-clock seconds per phase of one repeat.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub seed: u64,
    pub data: f64,
    pub strategies: f64,
    pub labels: f64,
    pub selectors: f64,
    pub evaluation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatFailure {
    pub seed: u64,
    pub phase: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over the repeats.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateColumn {
    pub name: String,
    /// Relative primary-metric error; absent when every repeat was degenerate.
    pub relative: Option<MeanStd>,
    /// One entry per configured metric.
    pub mean_loss: Vec<MeanStd>,
    pub task_rank: MeanStd,
    pub mean_instance_rank: MeanStd,
    pub top1_share: MeanStd,
}

/// Trained artifacts of one repeat, kept for emission.
#[derive(Debug, Clone)]
pub struct RepeatArtifacts {
    pub seed: u64,
    pub strategies: StrategySet,
    pub selectors: Vec<(String, TrainedSelector)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// Seeds of the successful repeats, aligned with `reports`.
    pub seeds: Vec<u64>,
    pub reports: Vec<EvaluationReport>,
    pub aggregate: Vec<AggregateColumn>,
    pub failures: Vec<RepeatFailure>,
    pub timings: Vec<PhaseTimings>,
    pub ablation: Vec<AblationRow>,
    pub subset_samples: Vec<SubsetSample>,
    #[serde(skip)]
    pub artifacts: Vec<RepeatArtifacts>,
}

impl RunResult {
    pub fn column(&self, name: &str) -> Option<&AggregateColumn> {
        self.aggregate.iter().find(|c| c.name == name)
    }
}

/// Everything one repeat produces before evaluation statistics.
pub(crate) struct Prepared {
    pub seed: u64,
    pub set: StrategySet,
    /// Windows and labels the selectors learn from.
    pub selector_inputs: Array2<f64>,
    pub selector_targets: Array2<f64>,
    pub selector_cube: Vec<Array2<f64>>,
    pub eval: WindowedDataset,
    pub eval_cube: Vec<Array2<f64>>,
    pub timings: PhaseTimings,
    pub dataset_label: String,
}

fn phase<T>(name: &'static str, seed: u64, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Phase {
        phase: name,
        seed,
        source: Box::new(e),
    })
}

/// Normalized windows split into (train, eval) for one seed.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(WindowedDataset, WindowedDataset)> {
    let (w, h) = (cfg.window(), cfg.horizon);
    let raw = cfg.dataset.load(seed)?;
    let ts = match cfg.normalization {
        Normalization::Global => normalize(&raw)?,
        Normalization::TrainRange => {
            let (train, _) = split(&make_windows(&raw, w, h)?, &cfg.split_spec())?;
            let last = train.origin_indices().last().copied().unwrap_or(0);
            let touched = &raw.values()[..(last + w + h).min(raw.len())];
            let scale = MinMax::fit(touched).ok_or_else(|| Error::DegenerateSeries(raw.name().to_string()))?;
            normalize_with(&raw, scale)
        }
    };
    split(&make_windows(&ts, w, h)?, &cfg.split_spec())
}

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Data, strategies and forecasts for one repeat.
pub(crate) fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let mut timings = PhaseTimings {
        seed,
        ..PhaseTimings::default()
    };
    let t = Instant::now();
    let (train, eval) = phase("data", seed, build_dataset(cfg, seed))?;
    timings.data = seconds_since(t);

    let t = Instant::now();
    let (forecaster_train, selector_data) = match cfg.selector_holdout {
        None => (train.clone(), train),
        Some(share) => {
            let cut = train.len() - ((train.len() as f64) * share).round() as usize;
            if cut == 0 || cut == train.len() {
                return Err(Error::Phase {
                    phase: "data",
                    seed,
                    source: Box::new(Error::InvalidSplit(format!(
                        "selector_holdout {share} leaves an empty partition of {} windows",
                        train.len()
                    ))),
                });
            }
            (train.slice(0, cut), train.slice(cut, train.len()))
        }
    };
    let specs = cfg.strategy_specs()?;
    let mlp = cfg.mlp.with_seed(derive_seed(seed, &["strategies", &cfg.mlp.seed.to_string()]));
    let set = phase("strategies", seed, train_all(&specs, &forecaster_train, &mlp))?;
    timings.strategies = seconds_since(t);

    let t = Instant::now();
    let selector_cube = phase("labels", seed, set.forecast_all(selector_data.inputs().view()))?;
    let eval_cube = phase("evaluation", seed, set.forecast_all(eval.inputs().view()))?;
    timings.labels = seconds_since(t);

    Ok(Prepared {
        seed,
        set,
        selector_inputs: selector_data.inputs().clone(),
        selector_targets: selector_data.targets().clone(),
        selector_cube,
        eval,
        eval_cube,
        timings,
        dataset_label: cfg.dataset.label(),
    })
}

impl Prepared {
    /// Labels over a subset of the strategies (positions into the subset).
    pub(crate) fn labels_for(&self, members: &[usize], metric: Metric) -> Result<StrategyLabels> {
        let cube: Vec<Array2<f64>> = members.iter().map(|&m| self.selector_cube[m].clone()).collect();
        labels_from_forecasts(&cube, self.selector_targets.view(), metric)
    }

    /// Eval forecasts of a selector restricted to `members`.
    pub(crate) fn dispatch(&self, selector: &TrainedSelector, members: &[usize]) -> Result<Array2<f64>> {
        let picks = selector.select_batch(self.eval.inputs().view())?;
        let cube: Vec<Array2<f64>> = members.iter().map(|&m| self.eval_cube[m].clone()).collect();
        dispatch_forecasts(&cube, &picks)
    }

    pub(crate) fn loss_matrix(&self, extra: &[(String, Array2<f64>)], metric: Metric) -> Result<LossMatrix> {
        let mut forecasts = self.eval_cube.clone();
        let mut names: Vec<String> = self.set.names().into_iter().map(String::from).collect();
        for (n, f) in extra {
            forecasts.push(f.clone());
            names.push(n.clone());
        }
        LossMatrix::from_forecasts(&forecasts, names, self.eval.targets().view(), metric)
    }
}

/// Classifier config with its seed mixed with the repeat seed and a context tag.
pub(crate) fn seeded_classifier(cfg: &ClassifierConfig, seed: u64, context: &str) -> ClassifierConfig {
    cfg.with_seed(derive_seed(seed, &[cfg.column_name(), context, &cfg.seed().to_string()]))
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub report: EvaluationReport,
    pub artifacts: RepeatArtifacts,
    pub timings: PhaseTimings,
    pub ablation: Vec<AblationRow>,
    pub subset_samples: Vec<SubsetSample>,
}

/// One repeat with an explicit seed. Studies switched on in the config run
/// against the same trained strategies.
pub fn run_repeat(cfg: &ExperimentConfig, seed: u64) -> Result<RepeatOutcome> {
    let mut prepared = prepare(cfg, seed)?;
    let all: Vec<usize> = (0..prepared.set.len()).collect();
    let metric = cfg.primary_metric();

    let t = Instant::now();
    let labels = phase("labels", seed, prepared.labels_for(&all, metric))?;
    prepared.timings.labels += seconds_since(t);

    let t = Instant::now();
    let mut selectors = Vec::new();
    for c in &cfg.classifiers {
        let seeded = seeded_classifier(c, seed, "full");
        let sel = phase("selectors", seed, train_selector(&seeded, &prepared.selector_inputs, &labels))?;
        selectors.push((c.column_name().to_string(), sel));
    }
    prepared.timings.selectors = seconds_since(t);

    let t = Instant::now();
    let report = phase("evaluation", seed, evaluate(cfg, &prepared, &selectors))?;
    prepared.timings.evaluation = seconds_since(t);

    let ablation = if cfg.ablate_gstar {
        phase("ablation", seed, studies::ablation_rows(cfg, &prepared, &report))?
    } else {
        Vec::new()
    };
    let subset_samples = match &cfg.subset_curve {
        Some(curve) => phase("subset-curve", seed, studies::subset_samples(cfg, curve, &prepared))?,
        None => Vec::new(),
    };

    Ok(RepeatOutcome {
        report,
        ablation,
        subset_samples,
        timings: prepared.timings.clone(),
        artifacts: RepeatArtifacts {
            seed,
            strategies: prepared.set,
            selectors,
        },
    })
}

fn evaluate(cfg: &ExperimentConfig, prepared: &Prepared, selectors: &[(String, TrainedSelector)]) -> Result<EvaluationReport> {
    let all: Vec<usize> = (0..prepared.set.len()).collect();
    let extra = selectors
        .iter()
        .map(|(name, sel)| Ok((name.clone(), prepared.dispatch(sel, &all)?)))
        .collect::<Result<Vec<_>>>()?;
    let matrices = cfg
        .metrics
        .iter()
        .map(|&m| prepared.loss_matrix(&extra, m))
        .collect::<Result<Vec<_>>>()?;
    let metadata = ReportMetadata {
        dataset: prepared.dataset_label.clone(),
        horizon: cfg.horizon,
        window: cfg.window(),
        train_fraction: cfg.train_fraction,
        seed: prepared.seed,
        repeats: cfg.repeats,
    };
    EvaluationReport::build(&matrices, prepared.set.len(), metadata)
}

fn aggregate(reports: &[EvaluationReport]) -> Vec<AggregateColumn> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    first
        .columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let gather = |f: &dyn Fn(&crate::eval::ColumnStats) -> f64| -> MeanStd {
                let v: Vec<f64> = reports.iter().map(|r| f(&r.columns[j])).collect();
                MeanStd::of(&v).expect("at least one report")
            };
            let relative: Vec<f64> = reports.iter().filter_map(|r| r.columns[j].relative).collect();
            AggregateColumn {
                name: col.name.clone(),
                relative: MeanStd::of(&relative),
                mean_loss: (0..col.mean_loss.len()).map(|k| gather(&|c| c.mean_loss[k])).collect(),
                task_rank: gather(&|c| c.task_rank),
                mean_instance_rank: gather(&|c| c.mean_instance_rank),
                top1_share: gather(&|c| c.top1_share),
            }
        })
        .collect()
}

/// Run every repeat, keep going past failed ones, and aggregate the rest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let mut result = RunResult {
        config: cfg.clone(),
        seeds: Vec::new(),
        reports: Vec::new(),
        aggregate: Vec::new(),
        failures: Vec::new(),
        timings: Vec::new(),
        ablation: Vec::new(),
        subset_samples: Vec::new(),
        artifacts: Vec::new(),
    };
    let mut last_error = None;
    for r in 0..cfg.repeats {
        let seed = cfg.base_seed + r as u64;
        match run_repeat(cfg, seed) {
            Ok(out) => {
                result.seeds.push(seed);
                result.reports.push(out.report);
                result.timings.push(out.timings);
                result.ablation.extend(out.ablation);
                result.subset_samples.extend(out.subset_samples);
                result.artifacts.push(out.artifacts);
            }
            Err(e) => {
                let phase = match &e {
                    Error::Phase { phase, .. } => phase.to_string(),
                    _ => "setup".into(),
                };
                result.failures.push(RepeatFailure {
                    seed,
                    phase,
                    message: e.to_string(),
                });
                last_error = Some(e);
            }
        }
    }
    if result.reports.is_empty() {
        return Err(last_error.expect("no reports means a failure was recorded"));
    }
    result.aggregate = aggregate(&result.reports);
    Ok(result)
}
