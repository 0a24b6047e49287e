use ggan::config::{ExperimentConfig, SplitSpec};
use ggan::corpus::{corrupt, partition_by_hours, PerturbKind};
use ggan::experiments::DeskData;
use ggan::metrics::*;
use ggan::models::{build_generator, enhance, GeneratorSpec};
use ggan::train::*;
use ggan::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default().with_seed(11);
    c.corpus.n_utterances = 60;
    c.splits = SplitSpec {
        clean_train: 20,
        noisy_train: 20,
        dev: 10,
        test: 10,
    };
    c.am_train.max_epochs = 4;
    c
}

/// Fully-convolutional generator computing the identity up to rounding:
/// hidden layers carry `[x, −x]`, and `(lrelu(x) − lrelu(−x))·5/6 = x` for
/// slope 0.2.
fn identity_generator(f: usize) -> ggan::models::Generator {
    let spec = GeneratorSpec::fully_convolutional(f, 2 * f);
    let mut g = build_generator(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let k = 5;
    for p in g.params.iter_mut() {
        let shape = p.value.shape().to_vec();
        let mut data = vec![0.0f32; p.value.numel()];
        if p.name.ends_with(".weight") {
            let (cout, cin) = (shape[0], shape[1]);
            let first = cin == f;
            for o in 0..cout {
                for i in 0..cin {
                    let w = if first {
                        // x → [x, −x]
                        if i == o % f { if o < f { 1.0 } else { -1.0 } } else { 0.0 }
                    } else {
                        // [a, b] → ±(a − b)·5/6
                        let sign_in = if i < f { 1.0 } else { -1.0 };
                        let sign_out = if o < f { 1.0 } else { -1.0 };
                        if i % f == o % f { sign_in * sign_out * 5.0 / 6.0 } else { 0.0 }
                    };
                    data[(o * cin + i) * k + k / 2] = w;
                }
            }
        }
        p.value = Tensor::new(shape, data).unwrap();
    }
    g
}

#[test]
fn identity_generator_matches_no_generator() {
    let cfg = small();
    let data = DeskData::build(&cfg).unwrap();
    let am = train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train)
        .unwrap()
        .model;
    let g = identity_generator(cfg.corpus.features);
    let u = &data.noisy_dev.utterances[0];
    let y = enhance(&g, &u.frames).unwrap();
    let err = y.data().iter().zip(u.frames.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(err < 1e-5, "{err}");

    let s2t = data.senone_to_token();
    let with = evaluate(&am, Some(&g), &data.noisy_dev, &s2t, DEFAULT_MIN_RUN).unwrap();
    let without = evaluate(&am, None, &data.noisy_dev, &s2t, DEFAULT_MIN_RUN).unwrap();
    assert_eq!(with.seer, without.seer);
    assert_eq!(with.counts, without.counts);
}

#[test]
fn seer_matches_per_frame_count_and_true_labels_decode_exactly() {
    let cfg = small();
    let data = DeskData::build(&cfg).unwrap();
    let am = train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train)
        .unwrap()
        .model;
    let corpus = &data.noisy_dev;
    let preds = predict_corpus(&am, None, corpus).unwrap();
    let (mut wrong, mut total) = (0, 0);
    for (p, u) in preds.iter().zip(&corpus.utterances) {
        assert_eq!(p.len(), u.labels.len());
        for t in 0..p.len() {
            wrong += usize::from(p[t] != u.labels[t]);
            total += 1;
        }
    }
    assert_eq!(seer(&am, None, corpus).unwrap(), wrong as f64 / total as f64);

    // The reference labels themselves decode to the reference tokens.
    let truth: Vec<Vec<usize>> = corpus.utterances.iter().map(|u| u.labels.clone()).collect();
    let r = report_from_predictions(&truth, corpus, &data.senone_to_token(), DEFAULT_MIN_RUN).unwrap();
    assert_eq!(r.seer, 0.0);
    assert_eq!(r.token_error_rate, 0.0);
    assert_eq!(r.counts.total(), 0);
}

#[test]
fn untrained_model_is_near_chance_and_lr_only_halves() {
    let mut cfg = small();
    cfg.am_train.max_epochs = 8;
    cfg.am_train.lr = 0.5;
    cfg.am_train.plateau_threshold = 0.05;
    let data = DeskData::build(&cfg).unwrap();
    let out = train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train).unwrap();
    assert_eq!(out.log[0].epoch, 0);
    assert!(out.log[0].train_loss.is_none());
    assert!(out.log[0].dev_seer > 0.8, "{}", out.log[0].dev_seer);
    assert!(out.best_seer < out.log[0].dev_seer);
    let lrs: Vec<f64> = out.log[1..].iter().map(|l| l.lr).collect();
    assert_eq!(lrs[0], 0.5);
    for w in lrs.windows(2) {
        assert!(w[1] == w[0] || w[1] == w[0] / 2.0, "{lrs:?}");
    }
    let logged_min = out.log.iter().map(|l| l.dev_seer).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_seer, logged_min);
}

#[test]
fn zero_epoch_fine_tune_returns_input() {
    let cfg = small();
    let data = DeskData::build(&cfg).unwrap();
    let am = train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train)
        .unwrap()
        .model;
    let g = build_generator(&cfg.generator, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut ft = cfg.finetune.clone();
    ft.max_epochs = 0;
    let out = fine_tune(&am, &g, &data.noisy_train, &data.noisy_dev, &ft).unwrap();
    assert_eq!(out.model.params.fingerprint(), am.params.fingerprint());
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.best_seer, seer(&am, Some(&g), &data.noisy_dev).unwrap());
}

#[test]
fn mtr_data_doubles_then_triples() {
    let mut cfg = small();
    cfg.am_train.max_epochs = 1;
    let data = DeskData::build(&cfg).unwrap();
    let n = data.noisy_train.len();
    for (sets, factor) in [(vec![PerturbKind::Speed], 2), (vec![PerturbKind::Speed, PerturbKind::Volume], 3)] {
        let out = train_mtr_baseline(
            &cfg.acoustic_model,
            &data.noisy_train,
            &cfg.perturb,
            &sets,
            &data.noisy_dev,
            &cfg.am_train,
        )
        .unwrap();
        assert_eq!(out.train_utterances, factor * n);
    }
}

#[test]
fn frozen_guide_and_step_discipline() {
    let mut cfg = small();
    cfg.gan.max_epochs = 2;
    let data = DeskData::build(&cfg).unwrap();
    let am = train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train)
        .unwrap()
        .model;
    let before = am.params.fingerprint();
    let nets = GanNetworks::build(&cfg.generator, &cfg.discriminator, cfg.gan.seed).unwrap();
    let out = train_gan(&data.clean_train, &data.noisy_train, &data.noisy_dev, &am, nets, &cfg.gan).unwrap();
    assert_eq!(am.params.fingerprint(), before);
    assert_eq!(out.am_fingerprint, before);
    assert_eq!(out.g_steps, out.d_steps);
    assert_eq!(out.steps.len(), out.g_steps);
    assert_eq!(seer(&am, Some(&out.generator), &data.noisy_dev).unwrap(), out.best_seer);
    // SN-GAN discriminator outputs are sigmoids, so |L_D| ≤ 1.
    assert!(out.steps.iter().all(|s| s.l_d.abs() <= 1.0));
}

#[test]
fn resumed_training_continues_numbering() {
    let mut cfg = small();
    cfg.gan.max_epochs = 1;
    let data = DeskData::build(&cfg).unwrap();
    let am = train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train)
        .unwrap()
        .model;
    let nets = GanNetworks::build(&cfg.generator, &cfg.discriminator, cfg.gan.seed).unwrap();
    let first = train_gan(&data.clean_train, &data.noisy_train, &data.noisy_dev, &am, nets, &cfg.gan).unwrap();
    let nets = GanNetworks {
        generator: first.last_generator.clone(),
        discriminator: first.discriminator.clone(),
        start_epoch: 1,
    };
    let second = train_gan(&data.clean_train, &data.noisy_train, &data.noisy_dev, &am, nets, &cfg.gan).unwrap();
    let epochs: Vec<usize> = second.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, [1, 2]);
    assert_eq!(second.steps[0].step, first.steps.len() + 1);
    // The resumed starting point scores what the first run ended with.
    assert_eq!(second.epochs[0].dev_seer, first.epochs.last().unwrap().dev_seer);
}

#[test]
fn partitions_are_nested_and_corruption_keeps_labels() {
    let cfg = small();
    let data = DeskData::build(&cfg).unwrap();
    let parts = partition_by_hours(&data.noisy_train, &[0.001, 0.002, 0.004], 360_000, 4).unwrap();
    for w in parts.windows(2) {
        assert!(w[0].iter().all(|i| w[1].contains(i)));
    }
    let u = &data.clean_dev.utterances[0];
    let c = corrupt(u, &cfg.corruption, 3).unwrap();
    assert_eq!((&c.labels, &c.tokens), (&u.labels, &u.tokens));
}
