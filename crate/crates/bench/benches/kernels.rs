use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ggan::metrics::seer;
use ggan::models::{build_discriminator, build_generator, enhance};
use ggan::nn::Mode;
use ggan::train::train_acoustic_model;
use ggan::Graph;
use ggan_bench::{random, small_task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let a = random(vec![256, 256], 1);
    let b = random(vec![256, 256], 2);
    c.bench_function("matmul 256 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(0);
            let x = g.input(a.clone()).unwrap();
            let y = g.input(b.clone()).unwrap();
            let p = g.matmul(x, y).unwrap();
            let s = g.sum(p).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

fn networks(c: &mut Criterion) {
    let (cfg, data) = small_task();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gen = build_generator(&cfg.generator, &mut rng).unwrap();
    let frames = &data.noisy_dev.utterances[0].frames;
    c.bench_function("generator enhance one utterance", |bench| {
        bench.iter(|| black_box(enhance(&gen, frames).unwrap()))
    });

    let disc = build_discriminator(&cfg.discriminator, &mut rng).unwrap();
    let batch = random(vec![16, cfg.corpus.features, cfg.gan.window], 3);
    c.bench_function("discriminator forward batch 16", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(0);
            let x = g.constant(batch.clone()).unwrap();
            black_box(disc.forward(&mut g, x, Mode::Eval, &mut Vec::new()).unwrap());
        })
    });

    let mut group = c.benchmark_group("acoustic model");
    group.sample_size(10);
    let am = train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train).unwrap();
    group.bench_function("dev SeER", |bench| {
        bench.iter(|| black_box(seer(&am.model, None, &data.noisy_dev).unwrap()))
    });
    group.bench_function("one training epoch", |bench| {
        bench.iter(|| {
            black_box(
                train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train).unwrap(),
            )
        })
    });
    group.finish();
}

criterion_group!(benches, matmul, networks);
criterion_main!(benches);
