use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dystrat::models::{train_mlp, MlpConfig};
use dystrat::selector::{labels_from_forecasts, train_selector, ClassifierConfig, ForestConfig};
use dystrat::eval::Metric;
use dystrat::strategies::{train_strategy, StrategySpec};
use dystrat_bench::mackey_glass_split;
use std::hint::black_box;

fn mlp_epoch(c: &mut Criterion) {
    let (train, _) = mackey_glass_split(3000, 40, 20);
    let cfg = MlpConfig {
        max_epochs: 1,
        ..MlpConfig::default()
    };
    c.bench_function("mlp one epoch, 2200x40 -> 20", |b| {
        b.iter(|| train_mlp(black_box(train.inputs()), black_box(train.targets()), &cfg).unwrap())
    });
}

fn strategy_forecast(c: &mut Criterion) {
    let (train, eval) = mackey_glass_split(2000, 40, 20);
    let cfg = MlpConfig {
        max_epochs: 5,
        ..MlpConfig::default()
    };
    let mut group = c.benchmark_group("forecast eval split");
    for spec in [StrategySpec::mo(20), StrategySpec::recmo(1), StrategySpec::dirmo(4), StrategySpec::dirrec()] {
        let s = train_strategy(&spec, &train, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(spec.display_name()), &s, |b, s| {
            b.iter(|| s.forecast_batch(black_box(eval.inputs().view())).unwrap())
        });
    }
    group.finish();
}

fn forest_fit(c: &mut Criterion) {
    let (train, _) = mackey_glass_split(2000, 40, 20);
    let cfg = MlpConfig {
        max_epochs: 5,
        ..MlpConfig::default()
    };
    let forecasts: Vec<_> = [StrategySpec::mo(20), StrategySpec::recmo(1), StrategySpec::dirmo(2)]
        .iter()
        .map(|spec| train_strategy(spec, &train, &cfg).unwrap().forecast_batch(train.inputs().view()).unwrap())
        .collect();
    let labels = labels_from_forecasts(&forecasts, train.targets().view(), Metric::Mse).unwrap();
    let forest = ClassifierConfig::TsForest(ForestConfig {
        n_trees: 20,
        ..ForestConfig::default()
    });
    let mut group = c.benchmark_group("selector fit");
    group.sample_size(10);
    group.bench_function("ts-forest 20 trees", |b| {
        b.iter(|| train_selector(&forest, black_box(train.inputs()), &labels).unwrap())
    });
    group.bench_function("knn", |b| {
        b.iter(|| train_selector(&ClassifierConfig::knn(), black_box(train.inputs()), &labels).unwrap())
    });
    group.finish();
}

criterion_group!(benches, mlp_epoch, strategy_forecast, forest_fit);
criterion_main!(benches);
