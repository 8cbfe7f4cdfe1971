use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ducc_bench::{labels, pattern};
use ducc_core::data::{augment_image, AugmentConfig};
use ducc_core::models::{build_variant, ModelConfig, ModelVariant};
use ducc_core::optim::bce_loss;
use ducc_core::tensor::{conv2d, conv2d_backward, maxpool2_with_indices, ConvSpec};
use ducc_core::Mode;
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    g.sample_size(20);
    for &(size, cin, cout) in &[(64, 3, 32), (32, 32, 32), (8, 32, 32)] {
        let spec = ConvSpec::same(3, cin, cout);
        let x = pattern(&[8, size, size, cin], 1);
        let k = pattern(&[3, 3, cin, cout], 2);
        let b = pattern(&[cout], 3);
        let id = format!("{size}x{size}x{cin}->{cout}");
        g.bench_with_input(BenchmarkId::new("forward", &id), &x, |bch, x| {
            bch.iter(|| conv2d(black_box(x), &k, &b, &spec).unwrap())
        });
        let y = conv2d(&x, &k, &b, &spec).unwrap();
        g.bench_with_input(BenchmarkId::new("backward", &id), &x, |bch, x| {
            bch.iter(|| conv2d_backward(black_box(x), &k, &y, &spec, true).unwrap())
        });
    }
    g.finish();
}

fn pool(c: &mut Criterion) {
    let x = pattern(&[8, 64, 64, 32], 4);
    c.bench_function("maxpool2 8x64x64x32", |b| b.iter(|| maxpool2_with_indices(black_box(&x)).unwrap()));
}

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("duccnet");
    g.sample_size(10);
    let cfg = ModelConfig::default();
    let mut net = build_variant::<f32>(ModelVariant::DuccNet, &cfg, 0).unwrap();
    let x = pattern(&[8, cfg.input_size, cfg.input_size, 3], 5);
    let y = labels(8);
    g.bench_function("forward batch 8", |b| b.iter(|| net.forward(black_box(&x), Mode::Infer, 0).unwrap()));
    g.bench_function("forward+backward batch 8", |b| {
        b.iter(|| {
            let (p, tape) = net.forward(&x, Mode::Train, 0).unwrap();
            let (_, dl) = bce_loss(&p, &y).unwrap();
            net.backward(&tape, &dl).unwrap()
        })
    });
    g.finish();
}

fn augmentation(c: &mut Criterion) {
    let img = pattern(&[64, 64, 3], 6);
    let cfg = AugmentConfig::default();
    let mut rng = ducc_core::seed::rng(0, &[]);
    c.bench_function("augment 64x64", |b| b.iter(|| augment_image(black_box(&img), &cfg, &mut rng).unwrap()));
}

criterion_group!(benches, conv, pool, network, augmentation);
criterion_main!(benches);
