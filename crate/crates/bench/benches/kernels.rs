use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use sigsde::scores::score_unbiased;
use sigsde::sigkernel::{gram_self, kernel_eval, kernel_grad_x};
use sigsde::{KernelSpec, Scheme, SolverConfig, StaticKernel};
use sigsde_bench::gbm_paths;

fn single_pair(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_eval");
    let sk = StaticKernel::Rbf { sigma: 1.0 };
    for len in [16, 64] {
        let b = gbm_paths(2, len, 1);
        for order in [0, 1, 2] {
            let cfg = SolverConfig::new(order, Scheme::Order2).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("L{len}"), order), &cfg, |bench, cfg| {
                bench.iter(|| kernel_eval(black_box(b.get(0)), black_box(b.get(1)), &sk, cfg).unwrap())
            });
        }
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let b = gbm_paths(2, 64, 2);
    let cfg = SolverConfig::new(1, Scheme::Order2).unwrap();
    let sk = StaticKernel::Rbf { sigma: 1.0 };
    c.bench_function("kernel_grad_x/L64/order1", |bench| {
        bench.iter(|| kernel_grad_x(black_box(b.get(0)), black_box(b.get(1)), &sk, &cfg).unwrap())
    });
}

fn batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch");
    group.sample_size(10);
    let cfg = SolverConfig::new(1, Scheme::Order2).unwrap();
    let sk = StaticKernel::Rbf { sigma: 1.0 };
    let x = gbm_paths(32, 64, 3);
    let y = gbm_paths(1, 64, 4);
    let spec = KernelSpec::single(sk, cfg);
    group.bench_function("gram_self/32xL64", |bench| bench.iter(|| gram_self(black_box(&x), &sk, &cfg).unwrap()));
    group.bench_function("score_unbiased_grad/32xL64", |bench| {
        bench.iter(|| score_unbiased(black_box(&x), y.get(0), &spec, true).unwrap())
    });
    group.finish();
}

criterion_group!(benches, single_pair, gradient, batch);
criterion_main!(benches);
