//! Studies built on top of a repeat: g* ablation, subset curves, sweeps.

use std::collections::HashMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{run_experiment, seeded_classifier, ExperimentConfig, GStarSplit, MeanStd, Prepared, RunResult};
use crate::error::{Error, Result};
use crate::eval::{best_fixed, oracle_error, EvaluationReport, LossMatrix, Metric};
use crate::seed::derived_rng;
use crate::selector::{train_selector, ClassifierConfig, TrainedSelector};

/// Which strategies a restricted subset curve may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestrictedPool {
    /// Drop RECMO with σ < H and RECTIFY.
    ExcludeRecursive,
    /// Keep MO and DIRMO only.
    DirectOnly,
}

impl RestrictedPool {
    pub fn label(self) -> &'static str {
        match self {
            Self::ExcludeRecursive => "exclude-recursive",
            Self::DirectOnly => "direct-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetCurveConfig {
    pub sizes: Vec<usize>,
    pub samples_per_size: usize,
    pub restricted_pool: Option<RestrictedPool>,
    /// The selector retrained for every subset.
    pub classifier: ClassifierConfig,
}

impl Default for SubsetCurveConfig {
    fn default() -> Self {
        Self {
            sizes: vec![2, 4, 8, 13],
            samples_per_size: 30,
            restricted_pool: Some(RestrictedPool::ExcludeRecursive),
            classifier: ClassifierConfig::ts_forest(),
        }
    }
}

/// One sampled subset and the relative error its selector reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSample {
    pub seed: u64,
    /// `"full"` or a restricted pool label.
    pub pool: String,
    pub size: usize,
    pub members: Vec<String>,
    /// Mean primary loss over the full-pool oracle.
    pub relative: f64,
    /// Oracle over the subset, divided by the same full-pool oracle.
    pub subset_oracle_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetPoint {
    pub seed: u64,
    pub pool: String,
    pub size: usize,
    pub samples: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedResult {
    pub pool: RestrictedPool,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetCurve {
    pub run: RunResult,
    pub points: Vec<SubsetPoint>,
    pub restricted: Option<RestrictedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub classifier: String,
    pub g_star: String,
    pub g_star_relative: f64,
    pub ablated_relative: f64,
    pub full_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub classifier: String,
    pub g_star: MeanStd,
    pub ablated: MeanStd,
    pub full: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub run: RunResult,
    pub summary: Vec<AblationSummary>,
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn mean_loss_of(lm: &LossMatrix, column: usize) -> f64 {
    lm.column_means()[column]
}

fn subset_key(members: &[usize]) -> String {
    members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("-")
}

/// Retrain `classifier` on a subset of the strategies and score it.
fn subset_relative(
    prepared: &Prepared,
    classifier: &ClassifierConfig,
    members: &[usize],
    metric: Metric,
    context: &str,
    oracle: f64,
) -> Result<(f64, TrainedSelector)> {
    let labels = prepared.labels_for(members, metric)?;
    let seeded = seeded_classifier(classifier, prepared.seed, &format!("{context}:{}", subset_key(members)));
    let selector = train_selector(&seeded, &prepared.selector_inputs, &labels)?;
    let forecasts = prepared.dispatch(&selector, members)?;
    let lm = LossMatrix::from_forecasts(&[forecasts], vec!["ds".into()], prepared.eval.targets().view(), metric)?;
    Ok((mean_loss_of(&lm, 0) / oracle, selector))
}

fn primary_matrix(prepared: &Prepared, metric: Metric) -> Result<LossMatrix> {
    prepared.loss_matrix(&[], metric)
}

pub(crate) fn ablation_rows(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    report: &EvaluationReport,
) -> Result<Vec<AblationRow>> {
    let n = prepared.set.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("ablation needs at least 2 strategies, got {n}")));
    }
    let metric = cfg.primary_metric();
    let lm = primary_matrix(prepared, metric)?;
    let all: Vec<usize> = (0..n).collect();
    let oracle = oracle_error(&lm, &all)?;
    if oracle == 0.0 {
        return Err(Error::DegenerateTask);
    }
    let g_star = match cfg.gstar_split {
        GStarSplit::Eval => report.g_star,
        GStarSplit::Train => {
            let train_lm = LossMatrix::from_forecasts(
                &prepared.selector_cube,
                prepared.set.names().into_iter().map(String::from).collect(),
                prepared.selector_targets.view(),
                metric,
            )?;
            best_fixed(&train_lm, &all)?
        }
    };
    let rest: Vec<usize> = all.iter().copied().filter(|&j| j != g_star).collect();
    let g_star_relative = mean_loss_of(&lm, g_star) / oracle;
    cfg.classifiers
        .iter()
        .map(|c| {
            let name = c.column_name();
            let full_relative = report
                .column(name)
                .and_then(|col| col.relative)
                .ok_or_else(|| Error::InvalidInput(format!("report has no relative error for {name}")))?;
            let (ablated_relative, _) = subset_relative(prepared, c, &rest, metric, "ablated", oracle)?;
            Ok(AblationRow {
                seed: prepared.seed,
                classifier: name.to_string(),
                g_star: prepared.set.names()[g_star].to_string(),
                g_star_relative,
                ablated_relative,
                full_relative,
            })
        })
        .collect()
}

fn pool_members(prepared: &Prepared, pool: Option<RestrictedPool>) -> Vec<usize> {
    let h = prepared.set.horizon();
    prepared
        .set
        .strategies()
        .iter()
        .enumerate()
        .filter(|(_, s)| match pool {
            None => true,
            Some(RestrictedPool::ExcludeRecursive) => !s.spec().is_recursive(h),
            Some(RestrictedPool::DirectOnly) => s.spec().is_direct(h),
        })
        .map(|(j, _)| j)
        .collect()
}

pub(crate) fn subset_samples(
    cfg: &ExperimentConfig,
    curve: &SubsetCurveConfig,
    prepared: &Prepared,
) -> Result<Vec<SubsetSample>> {
    let metric = cfg.primary_metric();
    let lm = primary_matrix(prepared, metric)?;
    let n = prepared.set.len();
    let oracle = oracle_error(&lm, &(0..n).collect::<Vec<_>>())?;
    if oracle == 0.0 {
        return Err(Error::DegenerateTask);
    }
    let names = prepared.set.names();
    let mut pools = vec![(None, "full".to_string())];
    if let Some(p) = curve.restricted_pool {
        pools.push((Some(p), p.label().to_string()));
    }
    let mut out = Vec::new();
    for (pool, label) in pools {
        let candidates = pool_members(prepared, pool);
        let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
        for &k in &curve.sizes {
            if k == 0 || k > candidates.len() {
                if pool.is_some() {
                    // Restricted pools are smaller; sizes beyond them are skipped.
                    continue;
                }
                return Err(Error::InvalidParameter(format!(
                    "subset size {k} outside [1, {}]",
                    candidates.len()
                )));
            }
            let mut rng = derived_rng(prepared.seed, &["subset", &label, &k.to_string()]);
            for _ in 0..curve.samples_per_size {
                let mut members: Vec<usize> =
                    sample(&mut rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
                members.sort_unstable();
                let relative = match cache.get(&members) {
                    Some(&r) => r,
                    None => {
                        let (r, _) = subset_relative(prepared, &curve.classifier, &members, metric, "subset", oracle)?;
                        cache.insert(members.clone(), r);
                        r
                    }
                };
                out.push(SubsetSample {
                    seed: prepared.seed,
                    pool: label.clone(),
                    size: k,
                    members: members.iter().map(|&m| names[m].to_string()).collect(),
                    relative,
                    subset_oracle_relative: oracle_error(&lm, &members)? / oracle,
                });
            }
        }
    }
    Ok(out)
}

/// Median and interquartile range per (seed, pool, size).
pub fn summarize_subsets(samples: &[SubsetSample]) -> Vec<SubsetPoint> {
    let mut keys: Vec<(u64, String, usize)> = Vec::new();
    for s in samples {
        let key = (s.seed, s.pool.clone(), s.size);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(seed, pool, size)| {
            let v: Vec<f64> = samples
                .iter()
                .filter(|s| s.seed == seed && s.pool == pool && s.size == size)
                .map(|s| s.relative)
                .collect();
            SubsetPoint {
                seed,
                pool,
                size,
                samples: v.len(),
                median: quantile(&v, 0.5),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
            }
        })
        .collect()
}

/// Run the config with a subset curve attached.
pub fn subset_curve(cfg: &ExperimentConfig, curve: SubsetCurveConfig) -> Result<SubsetCurve> {
    let mut cfg = cfg.clone();
    cfg.subset_curve = Some(curve.clone());
    let run = run_experiment(&cfg)?;
    let points = summarize_subsets(&run.subset_samples);
    let restricted = curve.restricted_pool.and_then(|pool| {
        run.artifacts.first().map(|a| RestrictedResult {
            pool,
            members: a
                .strategies
                .strategies()
                .iter()
                .filter(|s| match pool {
                    RestrictedPool::ExcludeRecursive => !s.spec().is_recursive(cfg.horizon),
                    RestrictedPool::DirectOnly => s.spec().is_direct(cfg.horizon),
                })
                .map(|s| s.name().to_string())
                .collect(),
        })
    });
    Ok(SubsetCurve {
        run,
        points,
        restricted,
    })
}

pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.classifier.as_str()) {
            names.push(&r.classifier);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.classifier == name).collect();
            let of = |f: fn(&AblationRow) -> f64| MeanStd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty");
            AblationSummary {
                classifier: name.to_string(),
                g_star: of(|r| r.g_star_relative),
                ablated: of(|r| r.ablated_relative),
                full: of(|r| r.full_relative),
            }
        })
        .collect()
}

/// Run the config with the g* ablation switched on.
pub fn ablate_gstar(cfg: &ExperimentConfig) -> Result<AblationResult> {
    let mut cfg = cfg.clone();
    cfg.ablate_gstar = true;
    let run = run_experiment(&cfg)?;
    let summary = summarize_ablation(&run.ablation);
    Ok(AblationResult { run, summary })
}

/// Mean task rank of every column shared by all runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub tasks: Vec<String>,
    pub columns: Vec<String>,
    /// Mean primary loss per task (rows) and column.
    pub losses: Vec<Vec<f64>>,
    pub mean_rank: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<RunResult>,
    /// Configs that produced no run, with the error text.
    pub failures: Vec<(ExperimentConfig, String)>,
    pub rank_table: Option<RankTable>,
}

fn task_label(cfg: &ExperimentConfig) -> String {
    format!(
        "{} H={} train={} W={}",
        cfg.dataset.label(),
        cfg.horizon,
        cfg.train_fraction,
        cfg.window_multiplier
    )
}

pub fn rank_table(runs: &[RunResult]) -> Result<Option<RankTable>> {
    let Some(first) = runs.first() else {
        return Ok(None);
    };
    let columns: Vec<String> = first
        .aggregate
        .iter()
        .map(|c| c.name.clone())
        .filter(|name| runs.iter().all(|r| r.column(name).is_some()))
        .collect();
    if columns.is_empty() {
        return Ok(None);
    }
    let losses: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| columns.iter().map(|c| r.column(c).expect("common column").mean_loss[0].mean).collect())
        .collect();
    let mean_rank = crate::eval::task_rank(&losses)?;
    Ok(Some(RankTable {
        tasks: runs.iter().map(|r| task_label(&r.config)).collect(),
        columns,
        losses,
        mean_rank,
    }))
}

/// Run every config; failed ones are recorded and skipped.
pub fn sweep(grid: &[ExperimentConfig]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("a sweep needs at least one config".into()));
    }
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for cfg in grid {
        match run_experiment(cfg) {
            Ok(r) => runs.push(r),
            Err(e) => failures.push((cfg.clone(), e.to_string())),
        }
    }
    let rank_table = rank_table(&runs)?;
    Ok(SweepResult {
        runs,
        failures,
        rank_table,
    })
}
