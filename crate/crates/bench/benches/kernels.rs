use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dualx_core::degrade::{degrade_clip, DegradationConfig};
use dualx_core::metrics::{luma, ssim};
use dualx_core::model::infer;
use dualx_core::nn::{AttentionBlockWeights, BlockDims, ParamSet};
use dualx_core::topology::{apply_variant, AttentionVariant};
use dualx_core::{Init, ModelConfig, ModelWeights, Rng, Tape, Tensor};

fn randn(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::create(shape, Init::Normal { mean: 0.0, std: 1.0 }, &mut Rng::new(seed)).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64, 128, 256] {
        let (a, b) = (randn(&[n, n], 1), randn(&[n, n], 2));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let t = Tape::inference();
                t.matmul(&t.constant(a.clone()), &t.constant(b.clone())).unwrap()
            })
        });
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let dims = BlockDims::new(64, 4, 128).unwrap();
    let grid = randn(&[1, 64, 8, 16, 16], 3);
    let mut rng = Rng::new(4);
    let weights: Vec<_> = dims
        .specs("b")
        .into_iter()
        .map(|s| (s.name.clone(), Tensor::create(&s.shape, Init::Normal { mean: 0.0, std: 0.05 }, &mut rng).unwrap()))
        .collect();
    let mut g = c.benchmark_group("attention_block");
    for variant in [
        AttentionVariant::Spatial,
        AttentionVariant::Temporal,
        AttentionVariant::VerticalTemporal,
        AttentionVariant::HorizontalTemporal,
    ] {
        g.bench_function(variant.name(), |bench| {
            bench.iter(|| {
                let t = Tape::inference();
                let ps = ParamSet::from_vars(weights.iter().map(|(k, v)| (k.clone(), t.constant(v.clone()))));
                let blocks = [AttentionBlockWeights::from_params(&ps, "b", dims).unwrap()];
                apply_variant(&t, &t.constant(grid.clone()), variant, &blocks, 10000.0, 1e-5).unwrap()
            })
        });
    }
    g.finish();
}

fn degrade(c: &mut Criterion) {
    let hq = randn(&[1, 3, 4, 64, 64], 5).map(|v| v.abs().min(1.0));
    let cfg = DegradationConfig { seed: 1, ..Default::default() };
    c.bench_function("degrade_clip 4x64x64", |b| b.iter(|| degrade_clip(black_box(&hq), &cfg, 0).unwrap()));
}

fn ssim_bench(c: &mut Criterion) {
    let a = luma(&randn(&[3, 128, 128], 6).map(|v| v.abs().min(1.0))).unwrap();
    let b = luma(&randn(&[3, 128, 128], 7).map(|v| v.abs().min(1.0))).unwrap();
    c.bench_function("ssim 128x128", |bench| bench.iter(|| ssim(black_box(&a), black_box(&b)).unwrap()));
}

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let w = ModelWeights::init(&cfg, 0).unwrap();
    let x = randn(&[1, 3, 4, 16, 16], 8).map(|v| v.abs().min(1.0));
    c.bench_function("desk forward 4x16x16", |b| b.iter(|| infer(&cfg, &w, black_box(&x)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, attention, degrade, ssim_bench, forward
}
criterion_main!(benches);
