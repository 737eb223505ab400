//! Loss matrices, oracle-relative errors, rankings and top-1 shares.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::strategies::{Regressor, StrategySet};

/// Denominator guard for the percentage metrics.
pub const PERCENT_EPSILON: f64 = 1e-8;

/// Relative errors at or above this are shown as `>=10` in human-facing tables.
pub const RELATIVE_DISPLAY_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Mse,
    Mae,
    Mape,
    Smape,
    #[serde(rename = "max")]
    MaxErr,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Mse, Metric::Mae, Metric::Mape, Metric::Smape, Metric::MaxErr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Mae => "mae",
            Metric::Mape => "mape",
            Metric::Smape => "smape",
            Metric::MaxErr => "max",
        }
    }

    /// Loss of one forecast against its target.
    pub fn loss(self, y: &[f64], yhat: &[f64]) -> Result<f64> {
        check_lengths(y, yhat)?;
        Ok(self.loss_unchecked(y, yhat))
    }

    fn loss_unchecked<'a>(
        self,
        y: impl IntoIterator<Item = &'a f64>,
        yhat: impl IntoIterator<Item = &'a f64>,
    ) -> f64 {
        let pairs = y.into_iter().zip(yhat);
        let mut n = 0usize;
        let mut acc = 0.0f64;
        for (&t, &p) in pairs {
            n += 1;
            let d = (t - p).abs();
            match self {
                Metric::Mse => acc += d * d,
                Metric::Mae => acc += d,
                Metric::Mape => acc += d / t.abs().max(PERCENT_EPSILON),
                Metric::Smape => acc += 2.0 * d / (t.abs() + p.abs()).max(PERCENT_EPSILON),
                Metric::MaxErr => acc = acc.max(d),
            }
        }
        match self {
            Metric::Mse | Metric::Mae => acc / n as f64,
            Metric::Mape | Metric::Smape => acc / n as f64 * 100.0,
            Metric::MaxErr => acc,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "maxerr" && *m == Metric::MaxErr))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mse: f64,
    pub mae: f64,
    pub mape: f64,
    pub smape: f64,
    pub maxerr: f64,
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::InvalidInput(format!(
            "target has {} values, forecast has {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty forecast".into()));
    }
    Ok(())
}

pub fn point_metrics(y: &[f64], yhat: &[f64]) -> Result<PointMetrics> {
    check_lengths(y, yhat)?;
    Ok(PointMetrics {
        mse: Metric::Mse.loss_unchecked(y, yhat),
        mae: Metric::Mae.loss_unchecked(y, yhat),
        mape: Metric::Mape.loss_unchecked(y, yhat),
        smape: Metric::Smape.loss_unchecked(y, yhat),
        maxerr: Metric::MaxErr.loss_unchecked(y, yhat),
    })
}

/// Per-instance losses, one column per forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMatrix {
    losses: Array2<f64>,
    column_names: Vec<String>,
    metric: Metric,
}

impl LossMatrix {
    pub fn new(losses: Array2<f64>, column_names: Vec<String>, metric: Metric) -> Result<Self> {
        if losses.ncols() != column_names.len() {
            return Err(Error::InvalidInput(format!(
                "{} loss columns but {} names",
                losses.ncols(),
                column_names.len()
            )));
        }
        if let Some(bad) = losses.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("loss {bad} is not a finite non-negative value")));
        }
        Ok(Self {
            losses,
            column_names,
            metric,
        })
    }

    /// Score forecast matrices (each `rows x H`) against the targets.
    pub fn from_forecasts(
        forecasts: &[Array2<f64>],
        column_names: Vec<String>,
        targets: ArrayView2<'_, f64>,
        metric: Metric,
    ) -> Result<Self> {
        let mut losses = Array2::zeros((targets.nrows(), forecasts.len()));
        for (j, f) in forecasts.iter().enumerate() {
            if f.dim() != targets.dim() {
                return Err(Error::InvalidInput(format!(
                    "forecast {j} has shape {:?}, targets {:?}",
                    f.dim(),
                    targets.dim()
                )));
            }
            for (i, (t, p)) in targets.rows().into_iter().zip(f.rows()).enumerate() {
                losses[(i, j)] = metric.loss_unchecked(t, p);
            }
        }
        Self::new(losses, column_names, metric)
    }

    pub fn losses(&self) -> &Array2<f64> {
        &self.losses
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn instance_count(&self) -> usize {
        self.losses.nrows()
    }

    pub fn column_count(&self) -> usize {
        self.losses.ncols()
    }

    pub fn column_means(&self) -> Vec<f64> {
        self.losses
            .columns()
            .into_iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    fn check_columns(&self, columns: &[usize]) -> Result<()> {
        if columns.is_empty() {
            return Err(Error::InvalidParameter("at least one fixed column is required".into()));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= self.column_count()) {
            return Err(Error::InvalidParameter(format!(
                "column {c} out of range for {} columns",
                self.column_count()
            )));
        }
        Ok(())
    }
}

/// Losses of every strategy in `set`, followed by `extra` columns of
/// precomputed forecasts (for example DyStrat variants) over the same rows.
pub fn loss_matrix<M: Regressor + Sync>(
    set: &StrategySet<M>,
    extra: &[(String, Array2<f64>)],
    data: &WindowedDataset,
    metric: Metric,
) -> Result<LossMatrix> {
    if data.horizon() != set.horizon() {
        return Err(Error::InvalidInput(format!(
            "data horizon {} does not match strategy horizon {}",
            data.horizon(),
            set.horizon()
        )));
    }
    let mut forecasts = set.forecast_all(data.inputs().view())?;
    let mut names: Vec<String> = set.names().into_iter().map(String::from).collect();
    for (name, f) in extra {
        forecasts.push(f.clone());
        names.push(name.clone());
    }
    LossMatrix::from_forecasts(&forecasts, names, data.targets().view(), metric)
}

/// Per-instance minimum over the fixed columns.
pub fn instance_oracle(lm: &LossMatrix, fixed_columns: &[usize]) -> Result<Vec<f64>> {
    lm.check_columns(fixed_columns)?;
    Ok(lm
        .losses
        .rows()
        .into_iter()
        .map(|row| fixed_columns.iter().map(|&c| row[c]).fold(f64::INFINITY, f64::min))
        .collect())
}

/// Mean over instances of the per-instance minimum loss.
pub fn oracle_error(lm: &LossMatrix, fixed_columns: &[usize]) -> Result<f64> {
    let mins = instance_oracle(lm, fixed_columns)?;
    Ok(mins.iter().sum::<f64>() / mins.len() as f64)
}

/// Column means divided by the oracle error.
pub fn relative_errors(lm: &LossMatrix, fixed_columns: &[usize]) -> Result<Vec<f64>> {
    let oracle = oracle_error(lm, fixed_columns)?;
    if oracle <= 0.0 {
        return Err(Error::DegenerateTask);
    }
    Ok(lm.column_means().into_iter().map(|m| m / oracle).collect())
}

/// Fixed column with the lowest mean loss; lowest index wins ties.
pub fn best_fixed(lm: &LossMatrix, fixed_columns: &[usize]) -> Result<usize> {
    lm.check_columns(fixed_columns)?;
    let means = lm.column_means();
    let mut best = fixed_columns[0];
    for &c in fixed_columns {
        if means[c] < means[best] || (means[c] == means[best] && c < best) {
            best = c;
        }
    }
    Ok(best)
}

/// Dense ranks (1-based) of `values`, ascending.
pub fn dense_ranks(values: &[f64]) -> Vec<usize> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    values
        .iter()
        .map(|v| distinct.partition_point(|d| d < v) + 1)
        .collect()
}

/// Mean over instances of each column's dense rank within the instance.
pub fn dense_rank_instance(lm: &LossMatrix) -> Vec<f64> {
    let mut sums = vec![0.0; lm.column_count()];
    for row in lm.losses.rows() {
        for (s, r) in sums.iter_mut().zip(dense_ranks(&row.to_vec())) {
            *s += r as f64;
        }
    }
    let n = lm.instance_count().max(1) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// Dense rank of each column's mean loss within each task, averaged over tasks.
pub fn task_rank(per_task_means: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_task_means
        .first()
        .ok_or_else(|| Error::InvalidInput("task_rank needs at least one task".into()))?;
    let cols = first.len();
    let mut sums = vec![0.0; cols];
    for means in per_task_means {
        if means.len() != cols {
            return Err(Error::InvalidInput(format!(
                "tasks disagree on column count: {cols} vs {}",
                means.len()
            )));
        }
        for (s, r) in sums.iter_mut().zip(dense_ranks(means)) {
            *s += r as f64;
        }
    }
    let n = per_task_means.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Share of labels equal to each column index.
pub fn top1_accuracy(labels: &[usize], n_columns: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels".into()));
    }
    let mut counts = vec![0usize; n_columns];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| {
            Error::InvalidInput(format!("label {l} out of range for {n_columns} columns"))
        })? += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / labels.len() as f64).collect())
}

/// Per-instance argmin over the fixed columns, lowest index on ties.
/// Returns positions into `fixed_columns`.
pub fn argmin_labels(lm: &LossMatrix, fixed_columns: &[usize]) -> Result<Vec<usize>> {
    lm.check_columns(fixed_columns)?;
    Ok(lm
        .losses
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &c) in fixed_columns.iter().enumerate() {
                if row[c] < row[fixed_columns[best]] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub kind: ColumnKind,
    /// Mean loss per metric, in the order of `EvaluationReport::metrics`.
    pub mean_loss: Vec<f64>,
    /// Mean primary-metric loss over the oracle; absent for degenerate tasks.
    pub relative: Option<f64>,
    pub task_rank: f64,
    pub mean_instance_rank: f64,
    /// Fixed columns: share of instances where it is the (lowest-index) optimum.
    /// Dynamic columns: share of instances where its loss equals the optimum.
    pub top1_share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub dataset: String,
    pub horizon: usize,
    pub window: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metrics: Vec<Metric>,
    pub columns: Vec<ColumnStats>,
    pub g_star: usize,
    pub oracle_mean_loss: f64,
    /// Oracle error over itself: exactly 1 unless the task is degenerate.
    pub oracle_relative: Option<f64>,
    pub degenerate: bool,
    pub instance_count: usize,
    pub metadata: ReportMetadata,
}

impl EvaluationReport {
    /// Summarize loss matrices over the same columns, one per metric. The
    /// first matrix is the primary metric; the first `fixed_count` columns are
    /// the fixed strategies and the rest are dynamic forecasters.
    pub fn build(matrices: &[LossMatrix], fixed_count: usize, metadata: ReportMetadata) -> Result<Self> {
        let primary = matrices
            .first()
            .ok_or_else(|| Error::InvalidInput("a report needs at least one loss matrix".into()))?;
        for lm in matrices {
            if lm.column_names != primary.column_names || lm.instance_count() != primary.instance_count() {
                return Err(Error::InvalidInput("loss matrices disagree on shape or columns".into()));
            }
        }
        if fixed_count == 0 || fixed_count > primary.column_count() {
            return Err(Error::InvalidParameter(format!(
                "fixed column count {fixed_count} out of range"
            )));
        }
        if primary.instance_count() == 0 {
            return Err(Error::InvalidInput("no instances to evaluate".into()));
        }
        let fixed: Vec<usize> = (0..fixed_count).collect();
        let means: Vec<Vec<f64>> = matrices.iter().map(LossMatrix::column_means).collect();
        let oracle_rows = instance_oracle(primary, &fixed)?;
        let oracle = oracle_error(primary, &fixed)?;
        let (relative, oracle_relative) = match relative_errors(primary, &fixed) {
            Ok(r) => (r.into_iter().map(Some).collect(), Some(oracle / oracle)),
            Err(Error::DegenerateTask) => (vec![None; primary.column_count()], None),
            Err(e) => return Err(e),
        };
        let task = task_rank(std::slice::from_ref(&means[0]))?;
        let instance_rank = dense_rank_instance(primary);
        let fixed_top1 = top1_accuracy(&argmin_labels(primary, &fixed)?, fixed_count)?;
        let n = primary.instance_count() as f64;

        let columns = (0..primary.column_count())
            .map(|j| {
                let top1_share = if j < fixed_count {
                    fixed_top1[j]
                } else {
                    let hits = primary
                        .losses
                        .column(j)
                        .iter()
                        .zip(&oracle_rows)
                        .filter(|(l, m)| l <= m)
                        .count();
                    hits as f64 / n
                };
                ColumnStats {
                    name: primary.column_names[j].clone(),
                    kind: if j < fixed_count { ColumnKind::Fixed } else { ColumnKind::Dynamic },
                    mean_loss: means.iter().map(|m| m[j]).collect(),
                    relative: relative[j],
                    task_rank: task[j],
                    mean_instance_rank: instance_rank[j],
                    top1_share,
                }
            })
            .collect();
        Ok(Self {
            metrics: matrices.iter().map(LossMatrix::metric).collect(),
            columns,
            g_star: best_fixed(primary, &fixed)?,
            oracle_mean_loss: oracle,
            oracle_relative,
            degenerate: oracle_relative.is_none(),
            instance_count: primary.instance_count(),
            metadata,
        })
    }

    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn g_star_name(&self) -> &str {
        &self.columns[self.g_star].name
    }

    /// CSV with one row per column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let primary = self.metrics.first().copied().unwrap_or_default();
        let mut header = vec!["column".to_string(), "kind".to_string()];
        header.extend(self.metrics.iter().map(|m| m.name().to_string()));
        header.extend([
            format!("relative_{primary}"),
            "task_rank".into(),
            "mean_instance_rank".into(),
            "top1_share".into(),
        ]);
        out.write_record(&header).map_err(csv_err)?;
        for c in &self.columns {
            let mut row = vec![
                c.name.clone(),
                match c.kind {
                    ColumnKind::Fixed => "fixed".into(),
                    ColumnKind::Dynamic => "dynamic".into(),
                },
            ];
            row.extend(c.mean_loss.iter().map(|v| v.to_string()));
            row.push(c.relative.map(|v| v.to_string()).unwrap_or_default());
            row.extend([
                c.task_rank.to_string(),
                c.mean_instance_rank.to_string(),
                c.top1_share.to_string(),
            ]);
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

/// Relative error as printed in tables: two decimals, capped at `>=10`.
pub fn display_relative(value: f64) -> String {
    if value >= RELATIVE_DISPLAY_CAP {
        ">=10".into()
    } else {
        format!("{value:.2}")
    }
}
