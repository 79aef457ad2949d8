use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dialact_core::dsp::{MfccConfig, MfccExtractor, WavSignal};
use dialact_core::model::{PreparedDialog, PreparedUtterance};
use dialact_core::tensor::{kernels, Gradients};
use dialact_core::{Model, ModelConfig, ModelKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("conv_time");
    // word-embedding input and the MFCC grid input
    for (name, d, t, w) in [
        ("text_300x100_w5", 300, 100, 5),
        ("mfcc_13x360_w5", 13, 360, 5),
    ] {
        let input = random(&mut rng, &[d, t]);
        let filter = random(&mut rng, &[d, w]);
        group.bench_function(name, |b| {
            b.iter(|| kernels::conv_time(black_box(&input), black_box(&filter)).unwrap())
        });
    }
    group.finish();
}

fn mfcc(c: &mut Criterion) {
    let rate = 16_000;
    let samples = (0..rate)
        .map(|i| (2.0 * std::f64::consts::PI * 220.0 * i as f64 / rate as f64).sin() * 0.5)
        .collect();
    let signal = WavSignal::new(rate, samples).unwrap();
    let ex = MfccExtractor::new(MfccConfig::default(), rate).unwrap();
    c.bench_function("mfcc_extract_1s_16k", |b| {
        b.iter(|| ex.extract(black_box(&signal)).unwrap())
    });
}

fn window(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> PreparedDialog<f32> {
    PreparedDialog {
        id: "bench".into(),
        utterances: (0..4)
            .map(|_| PreparedUtterance {
                ids: (0..12).map(|_| rng.gen_range(2..cfg.vocab_size)).collect(),
                acoustic: Some(random(rng, &[cfg.mfcc_dim, 150])),
                label: rng.gen_range(0..cfg.num_classes),
            })
            .collect(),
    }
}

fn lam(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("lam");
    group.sample_size(20);
    let desk = ModelConfig {
        kind: ModelKind::LexicoAcoustic,
        vocab_size: 500,
        embed_dim: 16,
        maps_per_width: 8,
        hidden_dim: 16,
        acoustic_maps: 16,
        ..ModelConfig::default()
    };
    let full = ModelConfig {
        kind: ModelKind::LexicoAcoustic,
        vocab_size: 500,
        ..ModelConfig::default()
    };
    for (name, cfg) in [("desk", desk), ("full", full)] {
        let model: Model<f32> = Model::new(cfg.clone(), 3).unwrap();
        let dialog = window(&mut rng, &cfg);
        let batch: Vec<&[PreparedUtterance<f32>]> = dialog.windows(3).collect();
        let last = *batch.last().unwrap();
        group.bench_with_input(BenchmarkId::new("predict", name), &last, |b, w| {
            b.iter(|| model.predict(black_box(w)).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("batch_loss_grad", name),
            &batch,
            |b, batch| {
                b.iter(|| {
                    let mut grads = Gradients::zeros_like(model.params());
                    model
                        .batch_loss(model.params(), batch, None, Some(&mut grads))
                        .unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, conv, mfcc, lam);
criterion_main!(benches);
