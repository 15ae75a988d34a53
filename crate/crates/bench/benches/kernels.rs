use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replaceblock::cam::compute_cam;
use replaceblock::mask::{sample_block_mask, MaskGenConfig, SamplingMode};
use replaceblock::nn::{softmax_cross_entropy, Architecture, MiniCnn};
use replaceblock::regularize::{
    training_forward, RegularizerKind, ReplaceBlockConfig, StepContext,
};
use replaceblock::tensor::{conv2d_backward, conv2d_forward, maxpool2d, Map2d, Shape, Tensor};

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

const BATCH: usize = 32;
// (cin, cout, side) of the three MiniCNN convolutions on 32×32 input
const LAYERS: [(usize, usize, usize); 3] = [(3, 32, 32), (32, 64, 16), (64, 128, 8)];

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3");
    for (i, &(cin, cout, side)) in LAYERS.iter().enumerate() {
        let x = random(Shape::new(BATCH, cin, side, side), 1);
        let w = random(Shape::new(cout, cin, 3, 3), 2);
        let b = vec![0.0; cout];
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        g.bench_with_input(BenchmarkId::new("forward", i), &(), |bch, _| {
            bch.iter(|| conv2d_forward(&x, &w, &b, 1, 1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("backward", i), &(), |bch, _| {
            bch.iter(|| conv2d_backward(&y, &x, &w, 1, 1).unwrap())
        });
    }
    g.finish();
}

fn pool(c: &mut Criterion) {
    let x = random(Shape::new(BATCH, 32, 32, 32), 3);
    c.bench_function("maxpool2x2/32x32x32", |b| {
        b.iter(|| maxpool2d(&x, 2, 2).unwrap())
    });
}

fn step(c: &mut Criterion) {
    let model = MiniCnn::new(Architecture::mini(3, 10), 0).unwrap();
    let x = random(Shape::new(BATCH, 3, 32, 32), 4);
    let labels: Vec<usize> = (0..BATCH).map(|i| i % 10).collect();
    let rb = ReplaceBlockConfig::default();
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for kind in [
        RegularizerKind::None,
        RegularizerKind::ReplaceBlock,
        RegularizerKind::DropBlock {
            keep_prob: 0.9,
            block_size: 3,
        },
    ] {
        g.bench_function(kind.label(), |b| {
            b.iter(|| {
                let trace = training_forward(
                    &model,
                    &x,
                    &labels,
                    &kind,
                    &rb,
                    &StepContext { seed: 0, step: 0 },
                )
                .unwrap();
                let (_, gl) = softmax_cross_entropy(&trace.logits, &labels).unwrap();
                model.backward(&trace, &gl).unwrap()
            })
        });
    }
    g.finish();
}

fn masks(c: &mut Criterion) {
    let cfg = MaskGenConfig {
        keep_prob: 0.9,
        block_size: 3,
        mode: SamplingMode::RrSm,
    };
    let att = Map2d::from_fn(16, 16, |y, x| (y * 16 + x) as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    c.bench_function("block_mask/rr_sm/16x16", |b| {
        b.iter(|| sample_block_mask(&cfg, Some(&att), 16, 16, &mut rng).unwrap())
    });
    let model = MiniCnn::new(Architecture::mini(3, 10), 0).unwrap();
    let f = random(Shape::new(BATCH, 128, 4, 4), 6);
    let labels: Vec<usize> = (0..BATCH).map(|i| i % 10).collect();
    c.bench_function("cam/batch32", |b| {
        b.iter(|| compute_cam(&f, &model.classifier, &labels).unwrap())
    });
}

criterion_group!(benches, conv, pool, step, masks);
criterion_main!(benches);
