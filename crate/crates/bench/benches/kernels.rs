use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tristream_core::evalviz::{auc, tsne_embed, TsneConfig};
use tristream_core::model::{BackboneConfig, ModelConfig, MultiStreamModel};
use tristream_core::numcore::{conv2d, Tape, Tensor};
use tristream_core::vision::{heatmap_normalize, max_connected_component, BinaryMask, GrayImage};

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("conv2d");
    for &(ch, size) in &[(8usize, 32usize), (16, 64)] {
        let x = random(&mut rng, vec![ch, size, size]);
        let k = random(&mut rng, vec![ch, ch, 3, 3]);
        let b = Tensor::zeros(vec![ch]);
        g.bench_with_input(BenchmarkId::new("forward", format!("{ch}x{size}")), &(), |bench, _| {
            bench.iter(|| conv2d(black_box(&x), &k, &b, 1, 1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("backward", format!("{ch}x{size}")), &(), |bench, _| {
            bench.iter(|| {
                let mut t = Tape::<f32>::new();
                let xv = t.leaf(x.clone());
                let kv = t.leaf(k.clone());
                let bv = t.leaf(b.clone());
                let y = t.conv2d(xv, kv, bv, 1, 1).unwrap();
                let p = t.global_avg_pool(y).unwrap();
                let s = t.sigmoid(p);
                let loss = t.bce(s, &vec![1.0; ch]).unwrap();
                t.backward(loss).unwrap()
            })
        });
    }
    g.finish();
}

fn bench_model(c: &mut Criterion) {
    let cfg = ModelConfig {
        backbone: BackboneConfig {
            stage_channels: vec![8, 16],
            final_channels: 16,
            input_size: 64,
            ..Default::default()
        },
        infected_size: 32,
        ..Default::default()
    };
    let model = MultiStreamModel::new(cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = GrayImage::new(64, 64, (0..64 * 64).map(|_| rng.random()).collect()).unwrap();
    let mut mask = BinaryMask::empty(64, 64);
    for r in 20..30 {
        for col in 10..50 {
            mask.set(r, col, true);
        }
    }
    c.bench_function("model/predict_64", |b| b.iter(|| model.predict(black_box(&img), &mask).unwrap()));
}

fn bench_vision(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let act = random(&mut rng, vec![32, 28, 28]).map(f32::abs);
    c.bench_function("vision/heatmap_normalize", |b| b.iter(|| heatmap_normalize(black_box(&act)).unwrap()));
    let bits = (0..224 * 224).map(|_| rng.random_bool(0.45)).collect();
    let mask = BinaryMask::new(224, 224, bits).unwrap();
    c.bench_function("vision/max_component_224", |b| b.iter(|| max_connected_component(black_box(&mask))));
}

fn bench_eval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
    c.bench_function("evalviz/auc_10k", |b| b.iter(|| auc(black_box(&scores), &labels).unwrap()));

    let feats: Vec<Vec<f32>> = (0..150).map(|_| (0..20).map(|_| rng.random()).collect()).collect();
    let cfg = TsneConfig {
        iterations: 250,
        ..Default::default()
    };
    let mut g = c.benchmark_group("evalviz");
    g.sample_size(10);
    g.bench_function("tsne_150x20", |b| b.iter(|| tsne_embed(black_box(&feats), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_conv, bench_model, bench_vision, bench_eval);
criterion_main!(benches);
