use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use ted_bench::{corpus, model, random_matrix};
use ted_core::policy::{train, EncoderKind, TedConfig};
use ted_core::tensor::Tape;

fn tensors(c: &mut Criterion) {
    for n in [32, 128] {
        let a = random_matrix(n, n, 1);
        let b = random_matrix(n, n, 2);
        c.bench_function(&format!("matmul {n}x{n}"), |bench| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    let x = random_matrix(64, 128, 3);
    let w1 = random_matrix(128, 256, 4);
    let w2 = random_matrix(256, 128, 5);
    c.bench_function("tape mlp forward+backward 64x128", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let a = t.param(w1.clone()).unwrap();
            let b = t.param(w2.clone()).unwrap();
            let h = t.matmul(xv, a).unwrap();
            let h = t.relu(h).unwrap();
            let y = t.matmul(h, b).unwrap();
            let l = t.mean(y).unwrap();
            black_box(t.backward(l).unwrap())
        })
    });
}

fn inference(c: &mut Criterion) {
    let data = corpus(20);
    for encoder in [EncoderKind::Transformer, EncoderKind::Lstm] {
        let (m, feats) = model(&data, encoder);
        let longest = feats.iter().max_by_key(|f| f.len()).unwrap();
        c.bench_function(&format!("{encoder} turn scores ({} turns)", longest.len()), |bench| {
            bench.iter(|| black_box(m.turn_scores(longest).unwrap()))
        });
    }
}

fn training(c: &mut Criterion) {
    let data = corpus(20);
    let mut group = c.benchmark_group("train one epoch, 20 dialogues");
    group.sample_size(10);
    for encoder in [EncoderKind::Transformer, EncoderKind::Lstm] {
        let config = TedConfig {
            encoder,
            epochs: 1,
            ..TedConfig::default()
        };
        group.bench_function(encoder.to_string(), |bench| {
            bench.iter_batched(|| config.clone(), |cfg| black_box(train(&data, &cfg).unwrap()), BatchSize::SmallInput)
        });
    }
    group.finish();
}

criterion_group!(benches, tensors, inference, training);
criterion_main!(benches);
