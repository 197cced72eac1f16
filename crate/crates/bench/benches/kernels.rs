use augsubset::influence::{factor_for_fit, score_all};
use augsubset::linmodel::fit_logistic;
use augsubset::seeds::rng_from_seed;
use augsubset::selection::{build_dpp_kernel, sample_kdpp};
use augsubset::transforms::rotate;
use augsubset::{ScoreMetric, ScoreVector, TrainConfig, TransformSpec};
use augsubset_bench::{image, two_class};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn fitting(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_logistic");
    for &(n, d) in &[(200, 10), (1000, 50), (400, 200)] {
        let data = two_class(n, d, 1);
        let cfg = TrainConfig::with_c(10.0);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}x{d}")),
            &data,
            |b, data| b.iter(|| fit_logistic(black_box(data), &cfg).unwrap()),
        );
    }
    group.finish();
}

fn influence_scores(c: &mut Criterion) {
    let mut group = c.benchmark_group("influence_scores");
    for &(n, d) in &[(1000, 50), (400, 200)] {
        let data = two_class(n, d, 2);
        let cfg = TrainConfig::with_c(10.0);
        let params = fit_logistic(&data, &cfg).unwrap();
        group.bench_function(format!("{n}x{d}"), |b| {
            b.iter(|| {
                let factor = factor_for_fit(&params, &data, &cfg).unwrap();
                score_all(&params, Some(&factor), &data, ScoreMetric::Influence, 0).unwrap()
            })
        });
    }
    group.finish();
}

fn kdpp(c: &mut Criterion) {
    let mut group = c.benchmark_group("kdpp");
    group.sample_size(10);
    let data = two_class(150, 40, 3);
    let q = ScoreVector::new(
        (0..150).map(|i| 1.0 + (i % 7) as f64).collect(),
        ScoreMetric::Loss,
        0,
    );
    let features = data.features();
    group.bench_function("kernel_150", |b| {
        b.iter(|| build_dpp_kernel(black_box(&features), &q).unwrap())
    });
    let kernel = build_dpp_kernel(&features, &q).unwrap();
    let mut rng = rng_from_seed(4);
    for k in [5, 20] {
        group.bench_function(format!("sample_150_k{k}"), |b| {
            b.iter(|| sample_kdpp(&kernel, k, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn transforms(c: &mut Criterion) {
    let img = image(5);
    c.bench_function("rotate_28x28", |b| {
        b.iter(|| rotate(black_box(&img), 17.5).unwrap())
    });
    let spec = TransformSpec::mnist_rotate();
    c.bench_function("mnist_rotate_family", |b| {
        b.iter(|| spec.apply_all(black_box(&img)).unwrap())
    });
}

criterion_group!(benches, fitting, influence_scores, kdpp, transforms);
criterion_main!(benches);
