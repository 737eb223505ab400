//! Per-instance strategy labels, window classifiers and dynamic dispatch.
//!
//! A label is the index of the strategy with the lowest loss on an instance,
//! lowest index on ties. A selector maps a raw window to such an index, and
//! [`DyStrat`] forecasts with whichever strategy the selector picks.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::eval::{argmin_labels, LossMatrix, Metric};
use crate::models::{fit_network, MlpConfig, Network, Output, TrainedRegressor};
use crate::seed;
use crate::strategies::{Regressor, StrategySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    #[default]
    LowestIndex,
}

/// Index of the locally optimal strategy for each instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyLabels {
    labels: Vec<usize>,
    n_strategies: usize,
    loss_used: Metric,
    tie_policy: TiePolicy,
}

impl StrategyLabels {
    pub fn new(labels: Vec<usize>, n_strategies: usize, loss_used: Metric) -> Result<Self> {
        if let Some(&l) = labels.iter().find(|&&l| l >= n_strategies) {
            return Err(Error::InvalidInput(format!(
                "label {l} out of range for {n_strategies} strategies"
            )));
        }
        Ok(Self {
            labels,
            n_strategies,
            loss_used,
            tie_policy: TiePolicy::LowestIndex,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_strategies(&self) -> usize {
        self.n_strategies
    }

    pub fn loss_used(&self) -> Metric {
        self.loss_used
    }

    pub fn tie_policy(&self) -> TiePolicy {
        self.tie_policy
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels restricted to `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ..self.clone()
        }
    }
}

/// Labels from precomputed forecasts, one `rows x H` matrix per strategy.
pub fn labels_from_forecasts(
    forecasts: &[Array2<f64>],
    targets: ArrayView2<'_, f64>,
    loss: Metric,
) -> Result<StrategyLabels> {
    let names = (0..forecasts.len()).map(|j| j.to_string()).collect();
    let lm = LossMatrix::from_forecasts(forecasts, names, targets, loss)?;
    let all: Vec<usize> = (0..forecasts.len()).collect();
    StrategyLabels::new(argmin_labels(&lm, &all)?, forecasts.len(), loss)
}

/// Score every strategy on every instance and keep the per-instance argmin.
pub fn compute_labels<M: Regressor + Sync>(
    set: &StrategySet<M>,
    data: &WindowedDataset,
    loss: Metric,
) -> Result<StrategyLabels> {
    if data.window() != set.window() || data.horizon() != set.horizon() {
        return Err(Error::InvalidInput(format!(
            "data is (w={}, H={}), strategies are (w={}, H={})",
            data.window(),
            data.horizon(),
            set.window(),
            set.horizon()
        )));
    }
    let forecasts = set.forecast_all(data.inputs().view())?;
    labels_from_forecasts(&forecasts, data.targets().view(), loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpClassifierConfig {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpClassifierConfig {
    fn default() -> Self {
        let base = MlpConfig::default();
        Self {
            hidden_width: base.hidden_width,
            learning_rate: base.learning_rate,
            epochs: base.max_epochs,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Distance,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            metric: Distance::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Intervals sampled per tree; `None` means `ceil(sqrt(w))`.
    pub n_intervals_per_tree: Option<usize>,
    pub min_interval_length: usize,
    /// `None` grows every tree until its leaves are pure.
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            n_intervals_per_tree: None,
            min_interval_length: 3,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifierConfig {
    Linear(LinearConfig),
    Mlp(MlpClassifierConfig),
    Knn(KnnConfig),
    TsForest(ForestConfig),
}

impl ClassifierConfig {
    pub fn linear() -> Self {
        Self::Linear(LinearConfig::default())
    }

    pub fn mlp() -> Self {
        Self::Mlp(MlpClassifierConfig::default())
    }

    pub fn knn() -> Self {
        Self::Knn(KnnConfig::default())
    }

    pub fn ts_forest() -> Self {
        Self::TsForest(ForestConfig::default())
    }

    /// The four families with default parameters.
    pub fn all_defaults() -> Vec<Self> {
        vec![Self::linear(), Self::mlp(), Self::knn(), Self::ts_forest()]
    }

    /// Column name used in reports.
    pub fn column_name(&self) -> &'static str {
        match self {
            Self::Linear(_) => "ds-linear",
            Self::Mlp(_) => "ds-mlp",
            Self::Knn(_) => "ds-knn",
            Self::TsForest(_) => "ds-tsf",
        }
    }

    /// Replace the seed of the seeded families.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Self::Mlp(c) => Self::Mlp(MlpClassifierConfig { seed, ..c }),
            Self::TsForest(c) => Self::TsForest(ForestConfig { seed, ..c }),
            other => other,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Mlp(c) => c.seed,
            Self::TsForest(c) => c.seed,
            _ => 0,
        }
    }

    pub fn validate(&self, window: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            Self::Linear(c) => {
                if !(c.learning_rate > 0.0) || c.l2 < 0.0 {
                    return bad("linear: learning_rate must be positive and l2 non-negative".into());
                }
            }
            Self::Mlp(c) => {
                if c.hidden_width == 0 || !(c.learning_rate > 0.0) {
                    return bad("mlp: hidden_width and learning_rate must be positive".into());
                }
            }
            Self::Knn(c) => {
                if c.k == 0 {
                    return bad("knn: k must be at least 1".into());
                }
            }
            Self::TsForest(c) => {
                if c.n_trees == 0 {
                    return bad("ts-forest: n_trees must be at least 1".into());
                }
                if c.n_intervals_per_tree == Some(0) {
                    return bad("ts-forest: n_intervals_per_tree must be at least 1".into());
                }
                if c.min_interval_length == 0 || c.min_interval_length > window {
                    return bad(format!(
                        "ts-forest: min_interval_length {} must be in [1, {window}]",
                        c.min_interval_length
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per interval `[start, end)`: mean, population standard deviation and
/// least-squares slope against the time index.
pub fn tsf_features(x: &[f64], intervals: &[(usize, usize)]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(3 * intervals.len());
    for &(start, end) in intervals {
        if start >= end || end > x.len() {
            return Err(Error::InvalidParameter(format!(
                "interval [{start}, {end}) is not within a window of {}",
                x.len()
            )));
        }
        push_interval_features(&x[start..end], &mut out);
    }
    Ok(out)
}

fn push_interval_features(seg: &[f64], out: &mut Vec<f64>) {
    let n = seg.len() as f64;
    let rough = seg.iter().sum::<f64>() / n;
    // One correction pass makes the mean of a constant segment exact.
    let mean = rough + seg.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let t_mean = (n - 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in seg.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - mean);
        sxx += dt * dt;
    }
    out.push(mean);
    out.push(var.sqrt());
    out.push(if sxx > 0.0 { sxy / sxx } else { 0.0 });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    /// Sparse class distribution of the training rows that reached the leaf.
    Leaf { distribution: Vec<(usize, f64)> },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IntervalTree {
    intervals: Vec<(usize, usize)>,
    nodes: Vec<Node>,
}

impl IntervalTree {
    fn leaf(&self, features: &[f64]) -> &[(usize, f64)] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { distribution } => return distribution,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if features[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Grows one unpruned classification tree with entropy splits.
struct TreeBuilder<'a> {
    /// Feature-major copy of the feature matrix.
    columns: &'a Array2<f64>,
    labels: &'a [usize],
    n_classes: usize,
    max_depth: Option<usize>,
    /// `k ln k` for every count that can occur.
    xlogx: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn grow(&self) -> Vec<Node> {
        let n = self.labels.len();
        let n_features = self.columns.nrows();
        let root: Vec<Vec<u32>> = (0..n_features)
            .map(|f| {
                let col = self.columns.row(f);
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let mut nodes = vec![Node::Leaf { distribution: Vec::new() }];
        let mut goes_left = vec![false; n];
        let mut stack = vec![(0usize, root, 0usize)];
        while let Some((id, lists, depth)) = stack.pop() {
            let mut counts = vec![0usize; self.n_classes];
            for &s in &lists[0] {
                counts[self.labels[s as usize]] += 1;
            }
            let m = lists[0].len();
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let capped = self.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || m < 2 || capped {
                None
            } else {
                self.best_split(&lists, &counts)
            };
            let Some((feature, position, threshold)) = split else {
                let distribution = counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(k, &c)| (k, c as f64 / m as f64))
                    .collect();
                nodes[id] = Node::Leaf { distribution };
                continue;
            };
            for (p, &s) in lists[feature].iter().enumerate() {
                goes_left[s as usize] = p <= position;
            }
            let (mut left_lists, mut right_lists) = (Vec::with_capacity(lists.len()), Vec::with_capacity(lists.len()));
            for list in lists {
                let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&s| goes_left[s as usize]);
                left_lists.push(l);
                right_lists.push(r);
            }
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { distribution: Vec::new() });
            nodes.push(Node::Leaf { distribution: Vec::new() });
            nodes[id] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
            stack.push((right, right_lists, depth + 1));
            stack.push((left, left_lists, depth + 1));
        }
        nodes
    }

    /// Lowest weighted child entropy over all features and cut points; the
    /// first candidate wins ties. Returns (feature, last left position, threshold).
    fn best_split(&self, lists: &[Vec<u32>], counts: &[usize]) -> Option<(usize, usize, f64)> {
        let m = lists[0].len();
        let xl = &self.xlogx;
        let right_total: f64 = counts.iter().map(|&c| xl[c]).sum();
        let mut best: Option<(f64, usize, usize, f64)> = None;
        let mut left = vec![0usize; self.n_classes];
        let mut right = vec![0usize; self.n_classes];
        for (f, list) in lists.iter().enumerate() {
            let col = self.columns.row(f);
            left.iter_mut().for_each(|c| *c = 0);
            right.copy_from_slice(counts);
            let (mut sum_left, mut sum_right) = (0.0, right_total);
            for p in 0..m - 1 {
                let c = self.labels[list[p] as usize];
                sum_left += xl[left[c] + 1] - xl[left[c]];
                left[c] += 1;
                sum_right += xl[right[c] - 1] - xl[right[c]];
                right[c] -= 1;
                let (a, b) = (col[list[p] as usize], col[list[p + 1] as usize]);
                if a >= b {
                    continue;
                }
                let impurity = xl[p + 1] - sum_left + xl[m - p - 1] - sum_right;
                if best.is_none_or(|(bi, ..)| impurity < bi) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid >= b { a } else { mid };
                    best = Some((impurity, f, p, threshold));
                }
            }
        }
        best.map(|(_, f, p, t)| (f, p, t))
    }
}

fn sample_intervals(window: usize, count: usize, min_len: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(min_len..=window);
            let start = rng.random_range(0..=window - len);
            (start, start + len)
        })
        .collect()
}

fn fit_forest(cfg: &ForestConfig, inputs: &Array2<f64>, labels: &[usize], n_classes: usize) -> Vec<IntervalTree> {
    let (n, w) = inputs.dim();
    let n_intervals = cfg
        .n_intervals_per_tree
        .unwrap_or_else(|| (w as f64).sqrt().ceil() as usize);
    let xlogx: Vec<f64> = (0..=n)
        .map(|k| if k == 0 { 0.0 } else { k as f64 * (k as f64).ln() })
        .collect();
    let rows: Vec<Vec<f64>> = inputs.rows().into_iter().map(|r| r.to_vec()).collect();
    (0..cfg.n_trees)
        .map(|t| {
            let mut rng = seed::derived_rng(cfg.seed, &["ts-forest", &t.to_string()]);
            let intervals = sample_intervals(w, n_intervals, cfg.min_interval_length, &mut rng);
            let mut columns = Array2::zeros((3 * intervals.len(), n));
            let mut buf = Vec::with_capacity(3 * intervals.len());
            for (i, row) in rows.iter().enumerate() {
                buf.clear();
                for &(s, e) in &intervals {
                    push_interval_features(&row[s..e], &mut buf);
                }
                columns.column_mut(i).assign(&Array1::from(buf.clone()));
            }
            let builder = TreeBuilder {
                columns: &columns,
                labels,
                n_classes,
                max_depth: cfg.max_depth,
                xlogx: xlogx.clone(),
            };
            IntervalTree {
                nodes: builder.grow(),
                intervals,
            }
        })
        .collect()
}

fn standardize_params(inputs: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = inputs.nrows() as f64;
    let mean: Vec<f64> = inputs.columns().into_iter().map(|c| c.sum() / n).collect();
    let scale = inputs
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if sd > 0.0 { sd } else { 1.0 }
        })
        .collect();
    (mean, scale)
}

/// One-vs-rest logistic regression by full-batch gradient descent on
/// standardized inputs. Returns `n_classes x (w + 1)` weights, bias last.
fn fit_linear(cfg: &LinearConfig, inputs: &Array2<f64>, labels: &[usize], n_classes: usize, mean: &[f64], scale: &[f64]) -> Result<Array2<f64>> {
    let (n, w) = inputs.dim();
    let mut x = Array2::ones((n, w + 1));
    for (i, row) in inputs.rows().into_iter().enumerate() {
        for j in 0..w {
            x[(i, j)] = (row[j] - mean[j]) / scale[j];
        }
    }
    let mut y = Array2::zeros((n, n_classes));
    for (i, &l) in labels.iter().enumerate() {
        y[(i, l)] = 1.0;
    }
    let mut weights: Array2<f64> = Array2::zeros((n_classes, w + 1));
    for epoch in 0..cfg.epochs {
        let z = x.dot(&weights.t());
        let residual = z.mapv(|v| 1.0 / (1.0 + (-v).exp())) - &y;
        let mut grad = residual.t().dot(&x) / n as f64;
        let mut penalty = weights.clone() * cfg.l2;
        penalty.column_mut(w).fill(0.0);
        grad += &penalty;
        weights.scaled_add(-cfg.learning_rate, &grad);
        if !weights.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(weights)
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum SelectorModel {
    Constant {
        class: usize,
    },
    Linear {
        mean: Vec<f64>,
        scale: Vec<f64>,
        weights: Array2<f64>,
    },
    Mlp {
        network: Network,
    },
    Knn {
        inputs: Array2<f64>,
        labels: Vec<usize>,
        k: usize,
    },
    Forest {
        trees: Vec<IntervalTree>,
    },
}

/// A fitted map from a window to a strategy index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSelector {
    config: ClassifierConfig,
    n_classes: usize,
    window: usize,
    model: SelectorModel,
}

/// Fit a classifier on windows and their labels. Single-class labels give a
/// constant selector.
pub fn train_selector(
    config: &ClassifierConfig,
    inputs: &Array2<f64>,
    labels: &StrategyLabels,
) -> Result<TrainedSelector> {
    let (n, w) = inputs.dim();
    if n == 0 {
        return Err(Error::InvalidInput("a selector needs at least one instance".into()));
    }
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} inputs but {} labels",
            labels.len()
        )));
    }
    if !inputs.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("selector inputs contain non-finite values".into()));
    }
    config.validate(w)?;
    let n_classes = labels.n_strategies();
    let z = labels.labels();
    let model = if z.iter().all(|&l| l == z[0]) {
        SelectorModel::Constant { class: z[0] }
    } else {
        match config {
            ClassifierConfig::Linear(c) => {
                let (mean, scale) = standardize_params(inputs);
                let weights = fit_linear(c, inputs, z, n_classes, &mean, &scale)?;
                SelectorModel::Linear { mean, scale, weights }
            }
            ClassifierConfig::Mlp(c) => {
                let mut onehot = Array2::zeros((n, n_classes));
                for (i, &l) in z.iter().enumerate() {
                    onehot[(i, l)] = 1.0;
                }
                let mlp = MlpConfig {
                    hidden_width: c.hidden_width,
                    learning_rate: c.learning_rate,
                    max_epochs: c.epochs,
                    seed: c.seed,
                    ..MlpConfig::default()
                };
                let (network, _) = fit_network(inputs, &onehot, &mlp, Output::Softmax)?;
                SelectorModel::Mlp { network }
            }
            ClassifierConfig::Knn(c) => SelectorModel::Knn {
                inputs: inputs.clone(),
                labels: z.to_vec(),
                k: c.k.min(n),
            },
            ClassifierConfig::TsForest(c) => SelectorModel::Forest {
                trees: fit_forest(c, inputs, z, n_classes),
            },
        }
    };
    Ok(TrainedSelector {
        config: *config,
        n_classes,
        window: w,
        model,
    })
}

impl TrainedSelector {
    /// A selector that always answers `class`.
    pub fn constant(class: usize, n_classes: usize, window: usize) -> Result<Self> {
        if class >= n_classes {
            return Err(Error::InvalidParameter(format!(
                "class {class} out of range for {n_classes}"
            )));
        }
        Ok(Self {
            config: ClassifierConfig::knn(),
            n_classes,
            window,
            model: SelectorModel::Constant { class },
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.model, SelectorModel::Constant { .. })
    }

    pub fn select(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.window {
            return Err(Error::InvalidInput(format!(
                "selector expects a window of {}, got {}",
                self.window,
                x.len()
            )));
        }
        let class = match &self.model {
            SelectorModel::Constant { class } => *class,
            SelectorModel::Linear { mean, scale, weights } => {
                let w = self.window;
                let scores: Vec<f64> = weights
                    .rows()
                    .into_iter()
                    .map(|row| {
                        let mut z = row[w];
                        for j in 0..w {
                            z += row[j] * (x[j] - mean[j]) / scale[j];
                        }
                        z
                    })
                    .collect();
                argmax_lowest(&scores)
            }
            SelectorModel::Mlp { network } => {
                let mut hidden = vec![0.0; network.b1.len()];
                let mut out = vec![0.0; network.output_dim()];
                network.predict_into(x, &mut hidden, &mut out);
                argmax_lowest(&out)
            }
            SelectorModel::Knn { inputs, labels, k } => {
                let mut dist: Vec<(f64, usize)> = inputs
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let d: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                        (d, i)
                    })
                    .collect();
                let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if *k < dist.len() {
                    dist.select_nth_unstable_by(*k - 1, order);
                }
                let mut votes = vec![0.0; self.n_classes];
                for &(_, i) in &dist[..*k] {
                    votes[labels[i]] += 1.0;
                }
                argmax_lowest(&votes)
            }
            SelectorModel::Forest { trees } => {
                let mut proba = vec![0.0; self.n_classes];
                let mut features = Vec::new();
                for tree in trees {
                    features.clear();
                    for &(s, e) in &tree.intervals {
                        push_interval_features(&x[s..e], &mut features);
                    }
                    for &(class, p) in tree.leaf(&features) {
                        proba[class] += p;
                    }
                }
                argmax_lowest(&proba)
            }
        };
        Ok(class)
    }

    pub fn select_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        inputs
            .axis_iter(Axis(0))
            .map(|row| self.select(&row.to_vec()))
            .collect()
    }

    /// Write as a CBOR bundle bound to a strategy-set fingerprint.
    pub fn write_bundle<W: Write>(&self, fingerprint: &str, writer: W) -> Result<()> {
        let bundle = SelectorBundleRef {
            fingerprint,
            selector: self,
        };
        ciborium::into_writer(&bundle, writer).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Read a bundle, refusing one trained against a different strategy set.
    pub fn read_bundle<R: Read>(reader: R, expected_fingerprint: &str) -> Result<Self> {
        let bundle: SelectorBundle =
            ciborium::from_reader(reader).map_err(|e| Error::Serialization(e.to_string()))?;
        if bundle.fingerprint != expected_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: expected_fingerprint.to_string(),
                found: bundle.fingerprint,
            });
        }
        Ok(bundle.selector)
    }
}

#[derive(Serialize)]
struct SelectorBundleRef<'a> {
    fingerprint: &'a str,
    selector: &'a TrainedSelector,
}

#[derive(Deserialize)]
struct SelectorBundle {
    fingerprint: String,
    selector: TrainedSelector,
}

/// A selector paired with the strategy set it chooses from.
#[derive(Debug, Clone)]
pub struct DyStrat<M = TrainedRegressor> {
    selector: TrainedSelector,
    strategy_set: StrategySet<M>,
}

impl<M: Regressor> DyStrat<M> {
    pub fn new(selector: TrainedSelector, strategy_set: StrategySet<M>) -> Result<Self> {
        if selector.n_classes() != strategy_set.len() {
            return Err(Error::InvalidInput(format!(
                "selector has {} classes, strategy set has {} members",
                selector.n_classes(),
                strategy_set.len()
            )));
        }
        if selector.window() != strategy_set.window() {
            return Err(Error::InvalidInput(format!(
                "selector window {} differs from strategy window {}",
                selector.window(),
                strategy_set.window()
            )));
        }
        Ok(Self {
            selector,
            strategy_set,
        })
    }

    pub fn selector(&self) -> &TrainedSelector {
        &self.selector
    }

    pub fn strategy_set(&self) -> &StrategySet<M> {
        &self.strategy_set
    }

    pub fn forecast(&self, x: &[f64]) -> Result<Vec<f64>> {
        dystrat_forecast(self, x)
    }
}

/// Forecast with the strategy the selector picks for `x`.
pub fn dystrat_forecast<M: Regressor>(ds: &DyStrat<M>, x: &[f64]) -> Result<Vec<f64>> {
    let index = ds.selector.select(x)?;
    let strategy = ds
        .strategy_set
        .get(index)
        .ok_or_else(|| Error::InvalidInput(format!("selected index {index} has no strategy")))?;
    strategy.forecast(x)
}

/// Row `i` of `forecasts[selections[i]]` for every row. Equivalent to
/// dispatching each window when the forecasts came from the same strategies.
pub fn dispatch_forecasts(forecasts: &[Array2<f64>], selections: &[usize]) -> Result<Array2<f64>> {
    let first = forecasts
        .first()
        .ok_or_else(|| Error::InvalidInput("no forecasts to dispatch".into()))?;
    if first.nrows() != selections.len() {
        return Err(Error::InvalidInput(format!(
            "{} selections for {} rows",
            selections.len(),
            first.nrows()
        )));
    }
    let mut out = Array2::zeros(first.dim());
    for (i, &s) in selections.iter().enumerate() {
        let src = forecasts
            .get(s)
            .ok_or_else(|| Error::InvalidInput(format!("selection {s} out of range")))?;
        out.row_mut(i).assign(&src.row(i));
    }
    Ok(out)
}
