use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crt_conformal::conformal::{augmented_quantile, weighted_augmented_quantile, WeightedScoreGroups};
use crt_conformal::dgp::{generate_trial, DgpConfig};
use crt_conformal::evaluation::run_replicate;
use crt_conformal::regression::{fit_forest, fit_ols, ForestParams};
use crt_conformal::{ArmPredictors, ConformalSettings, Level, Matrix, Method, RegressorSpec, Scope, StudyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn random_design(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = rows.iter().map(|r| r[0] - 0.5 * r[1] + rng.random_range(-1.0..1.0)).collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

fn quantiles(c: &mut Criterion) {
    let mut group = c.benchmark_group("quantile");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [50, 1000, 20_000] {
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        group.bench_with_input(BenchmarkId::new("augmented", n), &scores, |b, s| {
            b.iter(|| augmented_quantile(black_box(s), 0.1).unwrap())
        });
        let groups = WeightedScoreGroups::new(scores.chunks(25).map(|c| c.to_vec()).collect()).unwrap();
        group.bench_with_input(BenchmarkId::new("weighted", n), &groups, |b, g| {
            b.iter(|| weighted_augmented_quantile(black_box(g), 0.1).unwrap())
        });
    }
    group.finish();
}

fn regressors(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    let (x, y) = random_design(200, 5, 2);
    group.bench_function("ols_200x5", |b| b.iter(|| fit_ols(black_box(&x), black_box(&y)).unwrap()));
    let params = ForestParams::default();
    group.bench_function("forest_200x5", |b| b.iter(|| fit_forest(&x, &y, &params, 3).unwrap()));
    group.sample_size(20);
    let (x, y) = random_design(1500, 5, 4);
    group.bench_function("forest_1500x5", |b| b.iter(|| fit_forest(&x, &y, &params, 3).unwrap()));
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    let trial = generate_trial(&DgpConfig::new(100, 500, 5)).unwrap();
    for level in [Level::Cluster, Level::Individual] {
        let settings = ConformalSettings::new(level);
        let ensemble = RegressorSpec::default_ensemble();
        group.bench_function(format!("arm_predictors_{level}"), |b| {
            b.iter(|| ArmPredictors::fit(&trial.observed, &settings, &ensemble, 6).unwrap())
        });
    }
    let mut cfg = StudyConfig::new(DgpConfig::new(100, 500, 7));
    cfg.scopes = vec![Scope::Marginal];
    group.bench_function("replicate_cluster_all_methods", |b| b.iter(|| run_replicate(&cfg, 0).unwrap()));
    cfg.methods = vec![Method::O, Method::BDirect];
    cfg.regressor = RegressorSpec::Ols;
    group.bench_function("replicate_cluster_ols", |b| b.iter(|| run_replicate(&cfg, 0).unwrap()));
    group.finish();
}

criterion_group!(benches, quantiles, regressors, pipeline);
criterion_main!(benches);
