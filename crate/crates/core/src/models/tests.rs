use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Graph;
use crate::nn::Mode;
use crate::tensor::Tensor;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn run_g(gen: &Generator, x: Tensor) -> Tensor {
    let mut g = Graph::new(0);
    let v = g.input(x).unwrap();
    let y = gen.forward(&mut g, v).unwrap();
    g.value(y).clone()
}

fn run_d(d: &Discriminator, x: Tensor, mode: Mode, seed: u64) -> Vec<f32> {
    let mut g = Graph::new(seed);
    let v = g.input(x).unwrap();
    let y = d.forward(&mut g, v, mode, &mut Vec::new()).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn fc_generator_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gen: Generator = build_fc_generator(&GeneratorSpec::default_fc(8), &mut rng).unwrap();
    for t in [1, 7, 64] {
        let y = run_g(&gen, rand_tensor(&mut rng, vec![2, 8, t]));
        assert_eq!(y.shape(), &[2, 8, t]);
    }
}

#[test]
fn fc_generator_zero_output_layer_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut gen: Generator = build_fc_generator(&GeneratorSpec::default_fc(4), &mut rng).unwrap();
    gen.zero_output_layer();
    let y = enhance(&gen, &rand_tensor(&mut rng, vec![4, 13])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn fc_generator_parameter_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (f, h) = (8, 16);
    let gen: Generator = build_fc_generator(&GeneratorSpec::fully_convolutional(f, h), &mut rng).unwrap();
    let pairs = [(f, h), (h, h), (h, h), (h, h), (h, f)];
    let want: usize = pairs.iter().map(|&(ci, co)| co * ci * 5 + co).sum();
    assert_eq!(gen.params.num_trainable(), want);
}

#[test]
fn ed_generator_shapes() {
    assert_eq!(ed_encoder_lengths(64), vec![32, 16, 8, 4, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = GeneratorSpec::encoder_decoder(8, [8, 16, 16, 32, 32]);
    let gen: Generator = build_ed_generator(&spec, &mut rng).unwrap();
    for t in [64, 7, 1, 33, 100] {
        let y = run_g(&gen, rand_tensor(&mut rng, vec![1, 8, t]));
        assert_eq!(y.shape(), &[1, 8, t]);
    }
    // Decoder i (after upsampling) is spliced with encoder 5−i.
    let e = [8, 16, 16, 32, 32];
    for i in 1..=4 {
        let w = gen.params.by_name(&format!("dec{}.weight", i + 1)).unwrap();
        assert_eq!(w.value.shape()[0], e[4 - i] + e[4 - i]);
    }
    assert_eq!(gen.params.by_name("dec1.weight").unwrap().value.shape()[0], 32);
}

#[test]
fn generators_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = GeneratorSpec::encoder_decoder(4, [4, 4, 8, 8, 8]);
    let gen: Generator = build_ed_generator(&spec, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, vec![4, 40]);
    assert_eq!(enhance(&gen, &x).unwrap(), enhance(&gen, &x).unwrap());
}

#[test]
fn discriminators_output_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let specs = [
        DiscriminatorSpec::large(8, 32, [8; 8]),
        DiscriminatorSpec::large(8, 64, [4, 4, 8, 8, 8, 8, 16, 16]),
        DiscriminatorSpec::compact(8, 32, [8, 16, 16, 16]),
    ];
    for spec in specs {
        let d: Discriminator = build_discriminator(&spec, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, vec![3, 8, spec.window]).map(|v| v * 5.0);
        for mode in [Mode::Train, Mode::Eval] {
            let y = run_d(&d, x.clone(), mode, 9);
            assert_eq!(y.len(), 3);
            assert!(y.iter().all(|&p| p > 0.0 && p < 1.0));
        }
        let a = run_d(&d, x.clone(), Mode::Eval, 1);
        let b = run_d(&d, x.clone(), Mode::Eval, 2);
        assert_eq!(a, b);
        let a = run_d(&d, x.clone(), Mode::Train, 1);
        let b = run_d(&d, x, Mode::Train, 2);
        assert_ne!(a, b);
    }
}

#[test]
fn discriminator_head_sizes() {
    // 41 → 20 → 10 → 5 → 2 after padding a 32-frame window.
    assert_eq!(DiscriminatorSpec::large(8, 32, [8; 8]).fc_inputs(), 8 * 2);
    assert_eq!(DiscriminatorSpec::large(8, 64, [8; 8]).fc_inputs(), 8 * 4);
    assert_eq!(DiscriminatorSpec::large(8, 100, [8; 8]).fc_inputs(), 8 * 6);
    assert_eq!(DiscriminatorSpec::compact(8, 48, [4; 4]).fc_inputs(), 4 * 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d: Discriminator = build_discriminator(&DiscriminatorSpec::large(8, 64, [8; 8]), &mut rng).unwrap();
    assert_eq!(d.params.get(d.head_weight()).shape(), &[32, 1]);
    let small = DiscriminatorSpec::compact(8, 8, [4; 4]);
    assert!(build_discriminator::<f32>(&small, &mut rng).is_err());
}

#[test]
fn acoustic_model_outputs_log_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = AcousticModelSpec::new(13, 32, 10);
    assert_eq!(spec.input_dim(), 143);
    let am: AcousticModel = build_acoustic_model(&spec, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, vec![13, 20]);
    let lp = am.log_probs(&x).unwrap();
    assert_eq!(lp.shape(), &[20, 10]);
    for row in lp.data().chunks(10) {
        let lse = row.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln();
        assert!(lse.abs() < 1e-4);
    }
    let mut g = Graph::new(0);
    let v = g.input(Tensor::zeros(vec![4, 143])).unwrap();
    assert!(am.forward_spliced(&mut g, v, Mode::Train, &mut Vec::new()).is_ok());
}

#[test]
fn untrained_acoustic_model_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = 10;
    let am: AcousticModel = build_acoustic_model(&AcousticModelSpec::new(8, 32, c), &mut rng).unwrap();
    let t = 2000;
    let x = rand_tensor(&mut rng, vec![8, t]);
    let labels: Vec<usize> = (0..t).map(|i| i % c).collect();
    let pred = am.predict(&x).unwrap();
    let errors = pred.iter().zip(&labels).filter(|(p, l)| p != l).count();
    let seer = errors as f64 / t as f64;
    assert!((seer - (1.0 - 1.0 / c as f64)).abs() < 0.05, "{seer}");
}

#[test]
fn specs_round_trip_through_toml() {
    let g = GeneratorSpec::encoder_decoder(8, [8, 16, 16, 32, 32]);
    let s = toml::to_string(&g).unwrap();
    assert!(s.contains("encoder-decoder"));
    assert_eq!(toml::from_str::<GeneratorSpec>(&s).unwrap(), g);
    let d = DiscriminatorSpec::compact(8, 32, [8, 16, 16, 16]);
    assert_eq!(toml::from_str::<DiscriminatorSpec>(&toml::to_string(&d).unwrap()).unwrap(), d);
    let a = AcousticModelSpec::new(8, 32, 10);
    assert_eq!(toml::from_str::<AcousticModelSpec>(&toml::to_string(&a).unwrap()).unwrap(), a);
}
