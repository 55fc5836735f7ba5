use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rgauss::cov::{filter_cov_many_deg2_eig, second_moment};
use rgauss::gaussian::{fourth_moment_operator, sym_eigendecomp};
use rgauss::lowdim::{learn_mean_low_d, LowDimOptions};
use rgauss::mean::{filter_mean_opt, recover_mean, MeanOptions};
use rgauss::poly::QuadraticPoly;
use rgauss::univariate::{learn_mean_chi_squared, median};
use rgauss::Subspace;
use rgauss_bench::corrupted_fixture;

fn bench_univariate(c: &mut Criterion) {
    let set = corrupted_fixture(1, 100_000, 0.05, 1);
    let values: Vec<f64> = set.samples.column(0).iter().copied().collect();
    c.bench_function("median_100k", |b| {
        b.iter(|| median(black_box(&values)).unwrap())
    });

    let set20 = corrupted_fixture(20, 20_000, 0.02, 2);
    let poly = QuadraticPoly::from_matrix_normalized(nalgebra::DMatrix::identity(20, 20)).unwrap();
    c.bench_function("chi_squared_mean_20k_d20", |b| {
        b.iter(|| {
            learn_mean_chi_squared(black_box(&set20.samples), &poly, 0.02, 10.0, 0.1, 3).unwrap()
        })
    });
}

fn bench_linear_algebra(c: &mut Criterion) {
    let set = corrupted_fixture(50, 50_000, 0.1, 4);
    c.bench_function("second_moment_50k_d50", |b| {
        b.iter(|| second_moment(black_box(&set.samples)).unwrap())
    });
    let moment = second_moment(&set.samples).unwrap();
    c.bench_function("sym_eigendecomp_d50", |b| {
        b.iter(|| sym_eigendecomp(black_box(&moment)).unwrap())
    });
    c.bench_function("fourth_moment_operator_d10", |b| {
        let sigma = nalgebra::DMatrix::identity(10, 10);
        b.iter(|| fourth_moment_operator(black_box(&sigma)))
    });
}

fn bench_filters(c: &mut Criterion) {
    let mut group = c.benchmark_group("filters");
    group.sample_size(10);

    let set = corrupted_fixture(20, 20_000, 0.1, 5);
    group.bench_function("filter_mean_opt_d20_20k", |b| {
        b.iter(|| filter_mean_opt(black_box(&set.samples), 0.1, 0.05, &MeanOptions::default()))
    });
    group.bench_function("filter_cov_deg2_d20_20k", |b| {
        b.iter(|| filter_cov_many_deg2_eig(black_box(&set.samples), 0.1, 0.3, 0.05).unwrap())
    });

    for dim in [2usize, 3] {
        let set = corrupted_fixture(dim, 20_000, 0.05, 6 + dim as u64);
        let v = Subspace::full(dim);
        group.bench_with_input(
            BenchmarkId::new("learn_mean_low_d", dim),
            &dim,
            |b, _| {
                b.iter(|| {
                    learn_mean_low_d(
                        &v,
                        0.1,
                        0.05,
                        0.05,
                        black_box(&set.samples),
                        0.25,
                        &LowDimOptions::default(),
                    )
                    .unwrap()
                })
            },
        );
    }

    let set = corrupted_fixture(20, 20_000, 0.1, 9);
    group.bench_function("recover_mean_d20_20k", |b| {
        b.iter(|| recover_mean(black_box(&set.samples), 0.1, 0.05, &MeanOptions::default()))
    });
    group.finish();
}

criterion_group!(benches, bench_univariate, bench_linear_algebra, bench_filters);
criterion_main!(benches);
