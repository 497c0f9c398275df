use candle_core::{Device, Tensor};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use exbl_bench::{cam_and_mask, decoy_train, small_model};
use exbl_core::explain::{cams_for_samples, gradcam};
use exbl_core::loss::triplet_explanation_loss;
use exbl_core::metrics::activation_recall;
use exbl_core::{CamClass, LossConfig};

fn bench_gradcam(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradcam");
    group.sample_size(20);
    for size in [32, 64] {
        let train = decoy_train(size, 4);
        let model = small_model(size);
        let sample = &train.samples()[0];
        group.bench_with_input(BenchmarkId::new("single", size), &size, |b, _| {
            b.iter(|| gradcam(&model, black_box(sample), sample.label).unwrap())
        });
        let refs: Vec<_> = train.samples().iter().collect();
        group.bench_with_input(BenchmarkId::new("batch16", size), &size, |b, _| {
            b.iter(|| cams_for_samples(&model, black_box(&refs), CamClass::GroundTruth, 16).unwrap())
        });
    }
    group.finish();
}

fn bench_triplet(c: &mut Criterion) {
    let mut group = c.benchmark_group("triplet_loss");
    let config = LossConfig::default();
    for size in [64, 224] {
        let dev = Device::Cpu;
        let products = Tensor::rand(0f32, 1.0, (16, size, size, 3), &dev).unwrap();
        let good = Tensor::rand(0f32, 1.0, (size, size, 3), &dev).unwrap();
        let bad = Tensor::rand(0f32, 1.0, (size, size, 3), &dev).unwrap();
        group.bench_with_input(BenchmarkId::new("batch16", size), &size, |b, _| {
            b.iter(|| triplet_explanation_loss(black_box(&products), &good, &bad, &config).unwrap())
        });
    }
    group.finish();
}

fn bench_activation_recall(c: &mut Criterion) {
    let mut group = c.benchmark_group("activation_recall");
    for size in [64, 224] {
        let (cam, mask) = cam_and_mask(size);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| activation_recall(black_box(&cam), &mask).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_gradcam, bench_triplet, bench_activation_recall);
criterion_main!(benches);
