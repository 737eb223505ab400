use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dystrat::eval::display_relative;
use dystrat::harness::{
    ablate_gstar, emit, emit_sweep, run_experiment, subset_curve, sweep, DatasetSpec, EmitOptions, ExperimentConfig,
    GStarSplit, RestrictedPool, RunResult, SubsetCurveConfig,
};
use dystrat::selector::ClassifierConfig;

/// Dynamic selection of multi-step forecasting strategies.
#[derive(Debug, Parser)]
#[command(name = "dystrat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train strategies and selectors, evaluate, write reports.
    Run(Common),
    /// Run a grid of configs and rank columns across them.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Horizons to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Training fractions to sweep, comma separated.
        #[arg(long = "train-fracs", value_delimiter = ',')]
        train_fracs: Vec<f64>,
        /// Datasets to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<String>,
    },
    /// Relative error of selectors retrained on random strategy subsets.
    SubsetCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Extra restricted pool to sample from.
        #[arg(long, value_enum)]
        pool: Option<PoolArg>,
        /// Classifier retrained per subset: linear, mlp, knn or ts-forest.
        #[arg(long)]
        classifier: Option<String>,
    },
    /// Remove the best fixed strategy and retrain the selectors.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Split on which the best fixed strategy is picked.
        #[arg(long, value_enum)]
        gstar_split: Option<SplitArg>,
    },
    /// Write the configured dataset's raw series as CSV.
    GenData(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolArg {
    None,
    ExcludeRecursive,
    DirectOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Eval,
    Train,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; repeat r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory. Defaults to a fresh directory under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "DYSTRAT_OUT", default_value = "runs", hide_env_values = true)]
    out_root: PathBuf,
    /// Overwrite an output directory that already holds files.
    #[arg(long)]
    force: bool,
    /// mackey-glass, lorenz, sine, or path.csv[:column]
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long = "train-frac")]
    train_frac: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = DatasetSpec::parse(d)?;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(f) = self.train_frac {
            cfg.train_fraction = f;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, verb: &str, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| self.out_root.join(format!("{verb}-{}-seed{}", cfg.hash(), cfg.base_seed)))
    }

    fn emit_options(&self) -> EmitOptions {
        EmitOptions { force: self.force }
    }
}

fn print_run(run: &RunResult) {
    println!(
        "{} H={} w={} repeats {}/{}",
        run.config.dataset.label(),
        run.config.horizon,
        run.config.window(),
        run.reports.len(),
        run.config.repeats
    );
    for f in &run.failures {
        eprintln!("repeat seed {} failed in {}: {}", f.seed, f.phase, f.message);
    }
    println!("{:<12} {:>18} {:>10} {:>8}", "column", "relative", "task rank", "top-1");
    for c in &run.aggregate {
        let rel = c
            .relative
            .map(|r| format!("{} ± {:.2}", display_relative(r.mean), r.std))
            .unwrap_or_else(|| "-".into());
        println!("{:<12} {:>18} {:>10.2} {:>8.3}", c.name, rel, c.task_rank.mean, c.top1_share.mean);
    }
}

fn report_written(dir: &Path, count: usize) {
    println!("wrote {count} files to {}", dir.display());
}

fn classifier_by_name(name: &str) -> Result<ClassifierConfig> {
    Ok(match name {
        "linear" | "ds-linear" => ClassifierConfig::linear(),
        "mlp" | "ds-mlp" => ClassifierConfig::mlp(),
        "knn" | "ds-knn" => ClassifierConfig::knn(),
        "ts-forest" | "tsf" | "ds-tsf" => ClassifierConfig::ts_forest(),
        other => bail!("unknown classifier `{other}`"),
    })
}

fn run(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let result = run_experiment(&cfg)?;
    print_run(&result);
    let dir = common.out_dir("run", &cfg);
    let files = emit(&result, &dir, common.emit_options())?;
    report_written(&dir, files.len());
    Ok(())
}

fn run_sweep(common: &Common, horizons: &[usize], fracs: &[f64], datasets: &[String]) -> Result<()> {
    let base = common.config()?;
    let datasets: Vec<DatasetSpec> = if datasets.is_empty() {
        vec![base.dataset.clone()]
    } else {
        datasets.iter().map(|d| DatasetSpec::parse(d)).collect::<Result<_, _>>()?
    };
    let horizons = if horizons.is_empty() { vec![base.horizon] } else { horizons.to_vec() };
    let fracs = if fracs.is_empty() { vec![base.train_fraction] } else { fracs.to_vec() };
    let mut grid = Vec::new();
    for d in &datasets {
        for &h in &horizons {
            for &f in &fracs {
                let cfg = ExperimentConfig {
                    dataset: d.clone(),
                    horizon: h,
                    train_fraction: f,
                    ..base.clone()
                };
                cfg.validate().with_context(|| format!("grid cell {} H={h} train={f}", d.label()))?;
                grid.push(cfg);
            }
        }
    }
    let result = sweep(&grid)?;
    for r in &result.runs {
        print_run(r);
        println!();
    }
    for (cfg, message) in &result.failures {
        eprintln!("{} H={} train={} failed: {message}", cfg.dataset.label(), cfg.horizon, cfg.train_fraction);
    }
    if let Some(table) = &result.rank_table {
        println!("mean rank across {} tasks", table.tasks.len());
        for (c, r) in table.columns.iter().zip(&table.mean_rank) {
            println!("{c:<12} {r:>6.2}");
        }
    }
    let dir = common.out_dir("sweep", &base);
    let files = emit_sweep(&result, &dir, common.emit_options())?;
    report_written(&dir, files.len());
    Ok(())
}

fn run_subset_curve(
    common: &Common,
    sizes: &[usize],
    samples: Option<usize>,
    pool: Option<PoolArg>,
    classifier: Option<&str>,
) -> Result<()> {
    let cfg = common.config()?;
    let mut curve = cfg.subset_curve.clone().unwrap_or_default();
    if !sizes.is_empty() {
        curve.sizes = sizes.to_vec();
    }
    if let Some(n) = samples {
        curve.samples_per_size = n;
    }
    match pool {
        Some(PoolArg::None) => curve.restricted_pool = None,
        Some(PoolArg::ExcludeRecursive) => curve.restricted_pool = Some(RestrictedPool::ExcludeRecursive),
        Some(PoolArg::DirectOnly) => curve.restricted_pool = Some(RestrictedPool::DirectOnly),
        None => {}
    }
    if let Some(name) = classifier {
        curve.classifier = classifier_by_name(name)?;
    }
    let SubsetCurveConfig { sizes, .. } = &curve;
    println!("subset sizes {sizes:?}, {} samples each", curve.samples_per_size);
    let result = subset_curve(&cfg, curve)?;
    println!("{:<6} {:<18} {:>5} {:>8} {:>8} {:>8}", "seed", "pool", "size", "median", "q1", "q3");
    for p in &result.points {
        println!(
            "{:<6} {:<18} {:>5} {:>8.3} {:>8.3} {:>8.3}",
            p.seed, p.pool, p.size, p.median, p.q1, p.q3
        );
    }
    let dir = common.out_dir("subset-curve", &result.run.config);
    let files = emit(&result.run, &dir, common.emit_options())?;
    report_written(&dir, files.len());
    Ok(())
}

fn run_ablate(common: &Common, split: Option<SplitArg>) -> Result<()> {
    let mut cfg = common.config()?;
    match split {
        Some(SplitArg::Eval) => cfg.gstar_split = GStarSplit::Eval,
        Some(SplitArg::Train) => cfg.gstar_split = GStarSplit::Train,
        None => {}
    }
    let result = ablate_gstar(&cfg)?;
    println!("{:<12} {:>16} {:>16} {:>16}", "classifier", "g*", "ablated", "full");
    let fmt = |m: dystrat::harness::MeanStd| format!("{:.2} ± {:.2}", m.mean, m.std);
    for s in &result.summary {
        println!("{:<12} {:>16} {:>16} {:>16}", s.classifier, fmt(s.g_star), fmt(s.ablated), fmt(s.full));
    }
    let dir = common.out_dir("ablate", &result.run.config);
    let files = emit(&result.run, &dir, common.emit_options())?;
    report_written(&dir, files.len());
    Ok(())
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let series = cfg.dataset.load(cfg.base_seed)?;
    let path = match &common.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => p.clone(),
        Some(dir) => dir.join(format!("{}-seed{}.csv", series.name(), cfg.base_seed)),
        None => common.out_root.join(format!("{}-seed{}.csv", series.name(), cfg.base_seed)),
    };
    if path.exists() && !common.force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = String::from("value\n");
    for v in series.values() {
        text.push_str(&format!("{v}\n"));
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} values to {}", series.len(), path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(common) => run(common),
        Command::Sweep {
            common,
            horizons,
            train_fracs,
            datasets,
        } => run_sweep(common, horizons, train_fracs, datasets),
        Command::SubsetCurve {
            common,
            sizes,
            samples,
            pool,
            classifier,
        } => run_subset_curve(common, sizes, *samples, *pool, classifier.as_deref()),
        Command::Ablate { common, gstar_split } => run_ablate(common, *gstar_split),
        Command::GenData(common) => gen_data(common),
    }
}
