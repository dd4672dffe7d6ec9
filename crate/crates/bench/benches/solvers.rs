use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use svmbal::{compute_path, gram, solve_dual, KernelSpec};
use svmbal_bench::instance;

const RBF: KernelSpec = KernelSpec::Rbf { gamma: svmbal::Gamma::Median };

fn bench_gram(c: &mut Criterion) {
    let mut g = c.benchmark_group("gram");
    for n in [200, 800] {
        let inst = instance(n, 10, &KernelSpec::Linear, 1);
        let rbf = RBF.resolve(&inst.xs).unwrap();
        g.bench_with_input(BenchmarkId::new("rbf", n), &inst.xs, |b, xs| b.iter(|| gram(black_box(xs), &rbf)));
    }
    g.finish();
}

fn bench_solve_dual(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_dual");
    g.sample_size(10);
    for n in [200, 500] {
        let inst = instance(n, 5, &RBF, 2);
        g.bench_with_input(BenchmarkId::new("rbf", n), &inst, |b, inst| {
            b.iter(|| solve_dual(&inst.q, &inst.w, black_box(0.05)).unwrap())
        });
    }
    g.finish();
}

fn bench_path(c: &mut Criterion) {
    let mut g = c.benchmark_group("compute_path");
    g.sample_size(10);
    for (name, kernel) in [("linear", KernelSpec::Linear), ("rbf", RBF)] {
        let inst = instance(200, 5, &kernel, 3);
        g.bench_with_input(BenchmarkId::new(name, 200), &inst, |b, inst| {
            b.iter(|| compute_path(&inst.q, &inst.w, 1e-3).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_gram, bench_solve_dual, bench_path);
criterion_main!(benches);
