use proptest::prelude::*;

use super::*;

fn small(seed: u64, sigma: f64) -> CorpusManifest {
    CorpusManifest::generate(&CorpusParams {
        seed,
        n_utterances: 12,
        features: 4,
        senones: 12,
        vocab: 4,
        sigma_emit: sigma,
        ..CorpusParams::default()
    })
    .unwrap()
}

fn utt_from(frames: Vec<f32>, f: usize) -> FeatureUtterance {
    let t = frames.len() / f;
    FeatureUtterance {
        id: "u".into(),
        frames: Tensor::new(vec![f, t], frames).unwrap(),
        labels: (0..t).map(|i| i % 3).collect(),
        tokens: vec![0, 1],
    }
}

#[test]
fn synthesis_is_reproducible() {
    let m = small(3, 0.5);
    assert_eq!(synth_corpus(&m).unwrap(), synth_corpus(&m).unwrap());
    let text = toml::to_string(&m).unwrap();
    let back: CorpusManifest = toml::from_str(&text).unwrap();
    assert_eq!(synth_corpus(&back).unwrap(), synth_corpus(&m).unwrap());
    assert_ne!(synth_corpus(&small(4, 0.5)).unwrap(), synth_corpus(&m).unwrap());
}

#[test]
fn zero_noise_frames_equal_means() {
    let m = small(5, 0.0);
    for u in synth_corpus(&m).unwrap().utterances {
        let t = u.len();
        for (ti, &s) in u.labels.iter().enumerate() {
            for fi in 0..4 {
                assert_eq!(u.frames.data()[fi * t + ti], m.means[s][fi]);
            }
        }
    }
}

#[test]
fn lexicon_and_token_structure() {
    let m = CorpusManifest::generate(&CorpusParams::default()).unwrap();
    m.validate().unwrap();
    let owner = m.senone_to_token();
    let c = synth_corpus(&m).unwrap();
    for u in &c.utterances {
        assert!(u.tokens.windows(2).all(|w| w[0] != w[1]));
        // Run-length collapsing the per-frame token labels gives the tokens.
        let mut collapsed: Vec<usize> = Vec::new();
        for &s in &u.labels {
            let t = owner[s].unwrap();
            if collapsed.last() != Some(&t) {
                collapsed.push(t);
            }
        }
        assert_eq!(collapsed, u.tokens);
        let (lo, hi) = m.tokens_per_utterance;
        assert!((lo..=hi).contains(&u.tokens.len()));
    }
}

#[test]
fn class_means_converge() {
    let sigma = 0.8;
    let mut m = CorpusManifest::generate(&CorpusParams {
        seed: 9,
        n_utterances: 150,
        features: 3,
        senones: 8,
        vocab: 4,
        sigma_emit: sigma,
        ..CorpusParams::default()
    })
    .unwrap();
    m.n_utterances = 150;
    let c = synth_corpus(&m).unwrap();
    assert!(c.total_frames() > 10_000);
    let mut sum = vec![vec![0f64; 3]; 8];
    let mut n = vec![0usize; 8];
    for u in &c.utterances {
        let t = u.len();
        for (ti, &s) in u.labels.iter().enumerate() {
            n[s] += 1;
            for fi in 0..3 {
                sum[s][fi] += u.frames.data()[fi * t + ti] as f64;
            }
        }
    }
    for s in 0..8 {
        if n[s] == 0 {
            continue;
        }
        let bound = 3.0 * sigma / (n[s] as f64).sqrt();
        for fi in 0..3 {
            let mean = sum[s][fi] / n[s] as f64;
            assert!((mean - m.means[s][fi] as f64).abs() < bound);
        }
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    let mut p = CorpusParams::default();
    p.vocab = 30;
    assert!(CorpusManifest::generate(&p).is_err());
    p = CorpusParams::default();
    p.vocab = 1;
    assert!(CorpusManifest::generate(&p).is_err());
}

#[test]
fn identity_corruption_and_moving_average() {
    let u = synth_corpus(&small(1, 0.3)).unwrap().utterances.remove(0);
    assert_eq!(corrupt(&u, &CorruptionSpec::identity(), 4).unwrap(), u);

    let spike = utt_from(vec![0.0, 0.0, 3.0, 0.0, 0.0], 1);
    let ma = moving_average(&spike.frames, 3);
    assert_eq!(ma.data()[2], 1.0);
    assert_eq!(ma.data()[0], 0.0);
    assert_eq!(ma.data()[1], 1.0);
}

#[test]
fn corruption_keeps_labels_and_is_deterministic() {
    let c = synth_corpus(&small(2, 0.3)).unwrap();
    let spec = CorruptionSpec::default();
    for u in &c.utterances {
        let a = corrupt(u, &spec, 7).unwrap();
        assert_eq!(a, corrupt(u, &spec, 7).unwrap());
        assert_ne!(a, corrupt(u, &spec, 8).unwrap());
        assert_eq!(a.labels, u.labels);
        assert_eq!(a.tokens, u.tokens);
        assert_ne!(a.frames, u.frames);
    }
    let mut bad = spec.clone();
    bad.levels = Some(1);
    assert!(corrupt(&c.utterances[0], &bad, 0).is_err());
}

#[test]
fn quantizer_levels() {
    assert_eq!(quantize(0.4, 3, 1.0), 0.0);
    assert_eq!(quantize(0.6, 3, 1.0), 1.0);
    assert_eq!(quantize(-7.0, 3, 1.0), -1.0);
}

#[test]
fn perturbation_lengths_and_gains() {
    let f = 2;
    let frames: Vec<f32> = (0..200).map(|i| (i as f32 * 0.1).sin()).collect();
    let u = utt_from(frames, f);
    let spec = PerturbSpec::default();
    let fast = mtr_perturb(&u, 1, &spec, PerturbKind::Speed).unwrap();
    assert_eq!(fast.len(), 91);
    let slow = mtr_perturb(&u, 0, &spec, PerturbKind::Speed).unwrap();
    assert_eq!(slow.len(), 111);
    assert_eq!(slow.tokens, u.tokens);

    let loud = mtr_perturb(&u, 1, &spec, PerturbKind::Volume).unwrap();
    for (a, b) in loud.frames.data().iter().zip(u.frames.data()) {
        assert_eq!(*a, b * 1.2);
    }
    let unit = PerturbSpec {
        speed: (1.0, 1.0),
        volume: (1.0, 1.0),
    };
    let same = mtr_perturb(&u, 0, &unit, PerturbKind::Both).unwrap();
    assert_eq!(same.frames, u.frames);
    assert_eq!(same.labels, u.labels);

    let tiny = utt_from(vec![1.0, 2.0], 1);
    let squash = PerturbSpec {
        speed: (1.5, 1.5),
        volume: (1.0, 1.0),
    };
    assert!(mtr_perturb(&tiny, 0, &squash, PerturbKind::Speed).is_err());
}

#[test]
fn speed_perturbation_roughly_keeps_segments() {
    let c = synth_corpus(&small(6, 0.3)).unwrap();
    let spec = PerturbSpec::default();
    for (i, u) in c.utterances.iter().enumerate() {
        let p = mtr_perturb(u, i, &spec, PerturbKind::Speed).unwrap();
        let runs = |l: &[usize]| {
            let mut r: Vec<usize> = Vec::new();
            for &x in l {
                if r.last() != Some(&x) {
                    r.push(x);
                }
            }
            r
        };
        // Segments are at least three frames long, longer than one step.
        assert_eq!(runs(&p.labels), runs(&u.labels));
    }
}

#[test]
fn context_window_examples() {
    let one = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
    let w = context_window(&one, 5);
    assert_eq!(w.shape(), &[22, 1]);
    for o in 0..11 {
        assert_eq!(&w.data()[o * 2..o * 2 + 2], &[1.0, 2.0]);
    }

    let (f, t) = (3, 20);
    let x = Tensor::new(vec![f, t], (0..f * t).map(|i| i as f32).collect()).unwrap();
    let w = context_window(&x, 5);
    let col = |m: &Tensor, ti: usize| -> Vec<f32> {
        let tt = m.shape()[1];
        (0..m.shape()[0]).map(|r| m.data()[r * tt + ti]).collect()
    };
    let interior = col(&w, 9);
    let mut direct = Vec::new();
    for s in 4..=14 {
        direct.extend(col(&x, s));
    }
    assert_eq!(interior, direct);
    for ti in 0..t {
        assert_eq!(col(&w, ti)[5 * f..6 * f], col(&x, ti)[..]);
    }
}

#[test]
fn chunk_examples() {
    let u = utt_from((0..40).map(|i| i as f32).collect(), 1);
    assert_eq!(chunk(&u, 40, 5).len(), 1);
    let two = chunk(&u, 20, 20);
    assert_eq!(two.len(), 2);
    assert_eq!(two[0].frames.data()[19], 19.0);
    assert_eq!(two[1].frames.data()[0], 20.0);
    assert_eq!(two[1].labels, u.labels[20..].to_vec());
    assert!(chunk(&u, 41, 1).is_empty());
}

proptest! {
    #[test]
    fn chunk_count_matches_loop(t in 1usize..120, w in 1usize..40, hop in 1usize..20) {
        let u = utt_from(vec![0.5; t], 1);
        let mut expect = 0;
        let mut start = 0;
        while start + w <= t {
            expect += 1;
            start += hop;
        }
        prop_assert_eq!(chunk(&u, w, hop).len(), expect);
    }
}

#[test]
fn partitions_are_nested_and_sized() {
    let m = CorpusManifest::generate(&CorpusParams {
        n_utterances: 80,
        ..CorpusParams::default()
    })
    .unwrap();
    let c = synth_corpus(&m).unwrap();
    let fph = 1000;
    let hours = [1.0, 2.5, 5.0];
    let parts = partition_by_hours(&c, &hours, fph, 11).unwrap();
    assert_eq!(parts, partition_by_hours(&c, &hours, fph, 11).unwrap());
    for w in parts.windows(2) {
        assert!(w[1].starts_with(&w[0]));
    }
    let longest = c.utterances.iter().map(|u| u.len()).max().unwrap();
    for (p, h) in parts.iter().zip(hours) {
        let frames: usize = p.iter().map(|&i| c.utterances[i].len()).sum();
        let budget = (h * fph as f64) as usize;
        assert!(frames >= budget && frames < budget + longest);
    }
    assert!(partition_by_hours(&c, &[1e6], fph, 11).is_err());
}

#[test]
fn binary_round_trip_and_csv() {
    let c = synth_corpus(&small(8, 0.4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    write_corpus(&path, &c).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), c);
    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(read_corpus(&path), Err(Error::Format(_)) | Err(Error::Io(_))));

    let mut buf = Vec::new();
    export_csv(&c.utterances[0], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,f0,f1,f2,f3,label");
    assert_eq!(lines.len(), c.utterances[0].len() + 1);
}
