//! Sequential vs data-parallel paths of the hot kernels. Both variants run in
//! one binary: `par::sequential` pins the fallback for the closure's duration.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use scnseg::arch::{build_scn, plan_memory, ArchSpec, SCN_LABELS};
use scnseg::metrics::evaluate;
use scnseg::par;
use scnseg::tensor::{conv3d, conv3d_backward};
use scnseg::train::{generate_phantom, PhantomSpec};
use scnseg::volume::{gaussian_smooth, resample, GridSpec, Interpolation};
use scnseg::{Rng, Tensor};

fn modes() -> [(&'static str, bool); 2] {
    [("seq", true), ("par", false)]
}

fn run<R>(sequential: bool, f: impl FnOnce() -> R) -> R {
    if sequential {
        par::sequential(f)
    } else {
        f()
    }
}

fn conv(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let x = Tensor::from_fn(&[16, 32, 32, 32], |_| rng.uniform_range(-1.0, 1.0) as f32);
    let w = Tensor::from_fn(&[16, 16, 3, 3, 3], |_| rng.uniform_range(-0.1, 0.1) as f32);
    let b = Tensor::zeros(&[16]);
    let g = Tensor::from_fn(&[16, 32, 32, 32], |_| rng.uniform_range(-1.0, 1.0) as f32);
    let mut group = c.benchmark_group("conv3d_16x16_32cubed");
    group.sample_size(10);
    for (name, seq) in modes() {
        group.bench_function(BenchmarkId::new("forward", name), |bench| {
            bench.iter(|| run(seq, || black_box(conv3d(&x, &w, &b).unwrap())))
        });
        group.bench_function(BenchmarkId::new("backward", name), |bench| {
            bench.iter(|| run(seq, || black_box(conv3d_backward(&x, &w, &g).unwrap())))
        });
    }
    group.finish();
}

fn volume_ops(c: &mut Criterion) {
    let spec = PhantomSpec { dims: [64; 3], spacing: 1.0, ..PhantomSpec::default() };
    let (vol, _) = generate_phantom(&spec, &mut Rng::new(2)).unwrap();
    let target = GridSpec::new([48, 48, 48], [1.3; 3]);
    let mut group = c.benchmark_group("volume_64cubed");
    group.sample_size(10);
    for (name, seq) in modes() {
        group.bench_function(BenchmarkId::new("gaussian_smooth", name), |bench| {
            bench.iter(|| run(seq, || black_box(gaussian_smooth(&vol, 3.0))))
        });
        group.bench_function(BenchmarkId::new("resample_linear", name), |bench| {
            bench.iter(|| run(seq, || black_box(resample(&vol, &target, Interpolation::Linear, -1.0))))
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut net = build_scn(&ArchSpec::new(4, 8, 1, SCN_LABELS), &ArchSpec::new(3, 8, SCN_LABELS, SCN_LABELS), SCN_LABELS).unwrap();
    net.init_he(&mut Rng::new(3));
    let mut rng = Rng::new(4);
    let x = Tensor::from_fn(&[1, 32, 32, 32], |_| rng.uniform_range(-1.0, 1.0) as f32);
    let mut group = c.benchmark_group("reduced_scn_32cubed");
    group.sample_size(10);
    group.bench_function("plan_memory", |bench| bench.iter(|| black_box(plan_memory(&net, [32, 32, 32]).unwrap())));
    for (name, seq) in modes() {
        group.bench_function(BenchmarkId::new("forward_arena", name), |bench| {
            bench.iter(|| run(seq, || black_box(net.forward(&x).unwrap())))
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let spec = PhantomSpec::default();
    let cases: Vec<_> = (0..8)
        .map(|i| {
            let (_, gt) = generate_phantom(&spec, &mut Rng::new(10 + i)).unwrap();
            let (_, pred) = generate_phantom(&spec, &mut Rng::new(100 + i)).unwrap();
            (format!("case_{i}"), gt, pred)
        })
        .collect();
    let mut group = c.benchmark_group("evaluate_8x32cubed");
    group.sample_size(10);
    for (name, seq) in modes() {
        group.bench_function(name, |bench| bench.iter(|| run(seq, || black_box(evaluate(&cases).unwrap()))));
    }
    group.finish();
}

criterion_group!(benches, conv, volume_ops, network, metrics);
criterion_main!(benches);
