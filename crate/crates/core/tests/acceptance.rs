//! End-to-end exit criteria. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Criteria 6, 7, 9, 10 and 11 share ten seeded Mackey-Glass runs
//! (n=10000, H=20, train 75%, W=2, default forecasters and classifiers), so
//! the strategy sets are trained once per seed.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use dystrat::data::{generate_mackey_glass, make_windows, normalize, split, MackeyGlassParams, SplitSpec, WindowedDataset};
use dystrat::eval::{dense_ranks, instance_oracle, EvaluationReport, LossMatrix, Metric, ReportMetadata};
use dystrat::harness::{
    build_dataset, run_repeat, summarize_subsets, AblationRow, ExperimentConfig, RepeatOutcome, SubsetCurveConfig,
};
use dystrat::models::{gradient_check, MlpConfig};
use dystrat::selector::compute_labels;
use dystrat::strategies::{enumerate_strategies, train_strategy, Regressor, StrategySet, StrategySpec, TrainedStrategy};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MG_SEEDS: u64 = 10;
const FLOOR_SLACK: f64 = 1e-12;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const WIN_SEEDS_REQUIRED: usize = 8;
const MIN_MEAN_REDUCTION: f64 = 0.05;
const TOP1_RATIO: f64 = 2.0;
const TOP1_ABSOLUTE: f64 = 0.25;
const ABLATION_SEEDS_REQUIRED: usize = 6;
const SUBSET_SIZES: [usize; 4] = [2, 4, 8, 13];
const SUBSET_SAMPLES: usize = 30;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn failed(err: impl std::fmt::Display) -> Outcome {
    outcome(false, format!("error: {err}"))
}

fn floor_holds(report: &EvaluationReport) -> bool {
    report.oracle_relative == Some(1.0)
        && report.columns.iter().all(|c| c.relative.is_some_and(|r| r >= 1.0 - FLOOR_SLACK))
}

fn csv_bytes(report: &EvaluationReport) -> Vec<u8> {
    let mut out = Vec::new();
    report.write_csv(&mut out).expect("in-memory CSV");
    out
}

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.0..1.0))
}

fn criterion_2() -> Outcome {
    let h = 20;
    let ts = normalize(&generate_mackey_glass(2000, &MackeyGlassParams::default(), 0).unwrap()).unwrap();
    let (train, _) = split(&make_windows(&ts, 2 * h, h).unwrap(), &SplitSpec::default()).unwrap();
    let cfg = MlpConfig::default().with_seed(11);
    let trained: Result<Vec<_>, _> = [StrategySpec::mo(h), StrategySpec::recmo(h), StrategySpec::dirmo(h)]
        .iter()
        .map(|s| train_strategy(s, &train, &cfg))
        .collect();
    let trained = match trained {
        Ok(t) => t,
        Err(e) => return failed(e),
    };
    let inputs = random(100, 2 * h, 2);
    let mut mismatches = 0;
    for x in inputs.rows() {
        let x = x.to_vec();
        let f: Vec<Vec<u64>> = trained
            .iter()
            .map(|t| t.forecast(&x).unwrap().iter().map(|v| v.to_bits()).collect())
            .collect();
        if f[0] != f[1] || f[0] != f[2] {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 100 inputs differ"))
}

fn criterion_3() -> Outcome {
    let counts: Vec<usize> = [10, 20, 160].iter().map(|&h| enumerate_strategies(h).unwrap().len()).collect();
    outcome(counts == [9, 13, 25], format!("H=10,20,160 -> {counts:?}"))
}

#[derive(Debug, Clone)]
struct Affine {
    din: usize,
    dout: usize,
    slope: f64,
    offset: f64,
}

impl Regressor for Affine {
    fn input_dim(&self) -> usize {
        self.din
    }
    fn output_dim(&self) -> usize {
        self.dout
    }
    fn predict(&self, x: &[f64]) -> dystrat::Result<Vec<f64>> {
        let last = x[x.len() - 1];
        Ok((0..self.dout).map(|j| self.slope * last + self.offset * (j + 1) as f64).collect())
    }
}

fn criterion_4() -> Outcome {
    let (w, h) = (6, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let specs = [
        StrategySpec::mo(h),
        StrategySpec::recmo(1),
        StrategySpec::dirmo(1),
        StrategySpec::recmo(2),
        StrategySpec::dirmo(2),
    ];
    let strategies: Vec<TrainedStrategy<Affine>> = specs
        .iter()
        .map(|spec| {
            let (slope, offset) = (rng.random_range(0.5..1.5), rng.random_range(-0.1..0.1));
            let mk = |din, dout| Affine { din, dout, slope, offset };
            let models = match spec.sigma() {
                Some(s) if spec.display_name().starts_with('d') => (0..h / s).map(|_| mk(w, s)).collect(),
                Some(s) => vec![mk(w, s)],
                None => unreachable!(),
            };
            TrainedStrategy::from_parts(spec.clone(), w, h, models).unwrap()
        })
        .collect();
    let set = StrategySet::new(strategies, "stub").unwrap();
    let data = WindowedDataset::from_parts(random(50, w, 5), random(50, h, 6), (0..50).collect()).unwrap();
    let mut mismatches = 0;
    for metric in Metric::ALL {
        let labels = compute_labels(&set, &data, metric).unwrap();
        for i in 0..50 {
            let x = data.input(i).to_vec();
            let y = data.target(i).to_vec();
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, s) in set.strategies().iter().enumerate() {
                let l = metric.loss(&y, &s.forecast(&x).unwrap()).unwrap();
                if l < best.0 {
                    best = (l, j);
                }
            }
            if labels.labels()[i] != best.1 {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} label mismatches over 50 instances x 5 metrics"))
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for probe in 0..5u64 {
        let x = random(16, 6, 100 + probe).mapv(|v| 2.0 * v - 1.0);
        let y = random(16, 3, 200 + probe);
        let cfg = MlpConfig {
            hidden_width: 10,
            ..MlpConfig::default()
        }
        .with_seed(probe);
        match gradient_check(&cfg, &x, &y) {
            Ok(e) => worst = worst.max(e),
            Err(e) => return failed(e),
        }
    }
    outcome(worst < GRADIENT_TOLERANCE, format!("max relative error {worst:.3e}"))
}

fn criterion_8() -> Outcome {
    let mut bad = 0;
    for seed in 0..200u64 {
        let cols = 1 + (seed as usize % 17);
        let m = random(20, cols, seed).mapv(|v| (v * 5.0).floor());
        for row in m.rows() {
            let values = row.to_vec();
            let mut distinct = values.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let oracle: Vec<usize> = values.iter().map(|v| 1 + distinct.iter().filter(|u| *u < v).count()).collect();
            let got = dense_ranks(&values);
            if got != oracle || got.iter().any(|&r| r < 1 || r > cols) {
                bad += 1;
            }
        }
    }
    outcome(bad == 0, format!("{bad} of 4000 rows disagree with the sort oracle"))
}

fn mg_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        repeats: MG_SEEDS as usize,
        base_seed: 0,
        ablate_gstar: true,
        subset_curve: (seed == 0).then(|| SubsetCurveConfig {
            sizes: SUBSET_SIZES.to_vec(),
            samples_per_size: SUBSET_SAMPLES,
            restricted_pool: None,
            ..SubsetCurveConfig::default()
        }),
        ..ExperimentConfig::default()
    }
}

fn tsf_row(rows: &[AblationRow]) -> Option<&AblationRow> {
    rows.iter().find(|r| r.classifier == "ds-tsf")
}

struct MgOutcomes {
    c1: Outcome,
    c6: Outcome,
    c7: Outcome,
    c9: Outcome,
    c10: Outcome,
    c11: Outcome,
}

fn mg_criteria() -> MgOutcomes {
    let mut runs: Vec<RepeatOutcome> = Vec::new();
    for seed in 0..MG_SEEDS {
        let t = Instant::now();
        match run_repeat(&mg_config(seed), seed) {
            Ok(out) => {
                let r = &out.report;
                eprintln!(
                    "  mg seed {seed}: g*={} ds-tsf rel {:.4} in {:.0}s",
                    r.g_star_name(),
                    r.column("ds-tsf").and_then(|c| c.relative).unwrap_or(f64::NAN),
                    t.elapsed().as_secs_f64()
                );
                runs.push(out);
            }
            Err(e) => {
                let f = || failed(format!("seed {seed}: {e}"));
                return MgOutcomes {
                    c1: f(),
                    c6: f(),
                    c7: f(),
                    c9: f(),
                    c10: f(),
                    c11: f(),
                };
            }
        }
    }

    let floor_ok = runs.iter().filter(|o| floor_holds(&o.report)).count();
    let c1_mg = floor_ok == runs.len();

    // Criterion 6: DyStrat-TSF against the best fixed strategy of each seed.
    let mut wins = 0;
    let mut reductions = Vec::new();
    let mut ds_top1 = Vec::new();
    let mut g_top1 = Vec::new();
    for o in &runs {
        let r = &o.report;
        let g = &r.columns[r.g_star];
        let ds = r.column("ds-tsf").expect("ds-tsf column");
        if ds.mean_loss[0] < g.mean_loss[0] {
            wins += 1;
        }
        reductions.push(1.0 - ds.mean_loss[0] / g.mean_loss[0]);
        ds_top1.push(ds.top1_share);
        g_top1.push(g.top1_share);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_reduction = mean(&reductions);
    let c6 = outcome(
        wins >= WIN_SEEDS_REQUIRED && mean_reduction >= MIN_MEAN_REDUCTION,
        format!("ds-tsf beats g* on {wins}/{MG_SEEDS} seeds, mean MSE reduction {:.1}%", 100.0 * mean_reduction),
    );

    let (ds_t, g_t) = (mean(&ds_top1), mean(&g_top1));
    let c7 = outcome(
        ds_t >= TOP1_RATIO * g_t && ds_t >= TOP1_ABSOLUTE,
        format!("ds-tsf top-1 {ds_t:.3} vs best fixed share {g_t:.3} (ratio {:.2})", ds_t / g_t),
    );

    let c9 = subset_criterion(&runs[0]);

    let mut ablation_wins = 0;
    let (mut full, mut ablated) = (Vec::new(), Vec::new());
    for o in &runs {
        let row = tsf_row(&o.ablation).expect("ds-tsf ablation row");
        if row.ablated_relative < row.g_star_relative {
            ablation_wins += 1;
        }
        full.push(row.full_relative);
        ablated.push(row.ablated_relative);
    }
    let (full_m, abl_m) = (mean(&full), mean(&ablated));
    let g_m = mean(&runs.iter().map(|o| tsf_row(&o.ablation).unwrap().g_star_relative).collect::<Vec<_>>());
    let c10 = outcome(
        ablation_wins >= ABLATION_SEEDS_REQUIRED && full_m <= abl_m,
        format!(
            "ablated < g* on {ablation_wins}/{MG_SEEDS} seeds; mean relative g* {g_m:.3}, ablated {abl_m:.3}, full {full_m:.3}"
        ),
    );

    let c11 = match run_repeat(&mg_config(1), 0) {
        Ok(again) => {
            let same = csv_bytes(&again.report) == csv_bytes(&runs[0].report);
            outcome(same, if same { "seed 0 report CSV is byte-identical" } else { "seed 0 report CSV differs" })
        }
        Err(e) => failed(e),
    };

    MgOutcomes {
        c1: outcome(c1_mg, format!("{floor_ok}/{} Mackey-Glass reports", runs.len())),
        c6,
        c7,
        c9,
        c10,
        c11,
    }
}

fn subset_criterion(run: &RepeatOutcome) -> Outcome {
    let cfg = mg_config(0);
    let set = &run.artifacts.strategies;
    let (_, eval) = match build_dataset(&cfg, run.artifacts.seed) {
        Ok(d) => d,
        Err(e) => return failed(e),
    };
    let cube = set.forecast_all(eval.inputs().view()).unwrap();
    let names: Vec<String> = set.names().into_iter().map(String::from).collect();
    let lm = LossMatrix::from_forecasts(&cube, names, eval.targets().view(), Metric::Mse).unwrap();
    let position: HashMap<&str, usize> = set.names().into_iter().enumerate().map(|(j, n)| (n, j)).collect();

    let mut subsets: Vec<Vec<usize>> = run
        .subset_samples
        .iter()
        .map(|s| s.members.iter().map(|m| position[m.as_str()]).collect())
        .collect();
    subsets.sort();
    subsets.dedup();
    let oracles: Vec<Vec<f64>> = subsets.iter().map(|s| instance_oracle(&lm, s).unwrap()).collect();
    let (mut pairs, mut violations) = (0, 0);
    for (a, oa) in subsets.iter().zip(&oracles) {
        for (b, ob) in subsets.iter().zip(&oracles) {
            if a.len() < b.len() && a.iter().all(|m| b.contains(m)) {
                pairs += 1;
                if ob.iter().zip(oa).any(|(sup, sub)| sup > sub) {
                    violations += 1;
                }
            }
        }
    }

    let points = summarize_subsets(&run.subset_samples);
    let median_at = |k: usize| points.iter().find(|p| p.size == k && p.pool == "full").map(|p| p.median);
    let (m2, m13) = (median_at(2).unwrap_or(f64::NAN), median_at(13).unwrap_or(f64::NAN));
    let medians: Vec<String> = SUBSET_SIZES
        .iter()
        .map(|&k| format!("{k}:{:.3}", median_at(k).unwrap_or(f64::NAN)))
        .collect();
    outcome(
        pairs > 0 && violations == 0 && m13 <= m2,
        format!(
            "{violations} violations over {pairs} nested pairs; median relative by size {}",
            medians.join(" ")
        ),
    )
}

fn criterion_1_small() -> Outcome {
    // Synthetic loss matrices with dispatching columns appended.
    let mut bad = 0;
    for seed in 0..50u64 {
        let fixed = random(40, 7, seed);
        let mut m = Array2::zeros((40, 9));
        m.slice_mut(ndarray::s![.., ..7]).assign(&fixed);
        for i in 0..40 {
            m[(i, 7)] = fixed[(i, (i + seed as usize) % 7)];
            m[(i, 8)] = fixed.row(i).iter().cloned().fold(f64::INFINITY, f64::min);
        }
        let names = (0..9).map(|j| format!("c{j}")).collect();
        let lm = LossMatrix::new(m, names, Metric::Mse).unwrap();
        let report = EvaluationReport::build(&[lm], 7, ReportMetadata::default()).unwrap();
        if !floor_holds(&report) || report.columns[8].relative != Some(1.0) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 50 synthetic reports break the floor"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let c1_small = criterion_1_small();
    let c2 = criterion_2();
    let c3 = criterion_3();
    let c4 = criterion_4();
    let c5 = criterion_5();
    let c8 = criterion_8();
    let mg = mg_criteria();

    let c1 = outcome(c1_small.pass && mg.c1.pass, format!("{}; {}", c1_small.detail, mg.c1.detail));
    let results = [
        ("oracle floor", c1),
        ("collapse equality", c2),
        ("enumeration counts", c3),
        ("label oracle", c4),
        ("gradient check", c5),
        ("mackey-glass win", mg.c6),
        ("top-1 amplification", mg.c7),
        ("dense-rank bounds", c8),
        ("subset monotonicity", mg.c9),
        ("ablation direction", mg.c10),
        ("determinism", mg.c11),
    ];
    let mut all = true;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {:<22} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        all &= o.pass;
    }
    println!("acceptance finished in {:.0}s", start.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
