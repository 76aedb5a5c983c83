use criterion::{black_box, criterion_group, criterion_main, Criterion};
use sigsde::nsde::{init_params, sample};
use sigsde::{Architecture, NoiseBundle, SdeDims, TimeGrid};

fn forward(c: &mut Criterion) {
    let dims = SdeDims { d_a: 1, d_y: 8, d_w: 3, d_x: 1, d_c: 0 };
    let arch = Architecture { hidden: vec![16], ..Architecture::default() };
    let params = init_params(dims, &arch, 1.0, 1).unwrap();
    let grid = TimeGrid::index(64).unwrap();
    let noise = NoiseBundle::draw(&params, 64, &grid, 2, "bench");
    c.bench_function("sample/64xL64", |bench| {
        bench.iter(|| sample(black_box(&params), &grid, &noise, None).unwrap())
    });
}

criterion_group!(benches, forward);
criterion_main!(benches);
