//! The gradient penalty differentiates through an input gradient, so its
//! parameter gradient needs second-order rules for every discriminator op.
//! The reference here is a central difference of the penalty value itself.

mod common;

use ggan::autodiff::gradcheck::Tolerance;
use ggan::losses::gradient_penalty;
use ggan::models::{build_discriminator, DiscriminatorSpec};
use ggan::nn::*;
use ggan::{Graph, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tol() -> Tolerance {
    Tolerance {
        step: 1e-6,
        rtol: 2e-3,
        atol: 1e-5,
    }
}

struct Toy {
    params: ParamSet<f64>,
    conv: Conv1d,
    fc: Linear,
    window: usize,
}

impl Module<f64> for Toy {
    fn params(&self) -> &ParamSet<f64> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<f64> {
        &mut self.params
    }
}

impl Toy {
    fn forward(&self, g: &mut Graph<f64>, x: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let h = self.conv.forward(&self.params, g, x)?;
        let h = g.leaky_relu(h, 0.2)?;
        let h = g.reshape(h, vec![b, 4 * self.window])?;
        let y = self.fc.forward(&self.params, g, h)?;
        let y = g.sigmoid(y)?;
        g.reshape(y, vec![b])
    }
}

fn batch(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> (Tensor<f64>, Tensor<f64>) {
    let a = common::rand_tensor(rng, shape.clone());
    let b = common::rand_tensor(rng, shape).map(|v| 0.5 * v + 0.2);
    (a, b)
}

#[test]
fn toy_two_layer_penalty_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut ps = ParamSet::new();
    let conv = Conv1d::new(&mut ps, &mut rng, "conv", 3, 4, 3, 1, 1);
    let fc = Linear::new(&mut ps, &mut rng, "fc", 4 * 6, 1);
    let mut toy = Toy {
        params: ps,
        conv,
        fc,
        window: 6,
    };
    let (clean, fake) = batch(&mut rng, vec![3, 3, 6]);
    let report = check_params(&mut toy, 0, tol(), &ParamCheck::default(), |n, g| {
        let mut alpha_rng = ChaCha8Rng::seed_from_u64(8);
        gradient_penalty(g, &clean, &fake, &mut alpha_rng, |g, x| n.forward(g, x))
    })
    .unwrap();
    assert!(report.checked > 50);
    assert!(report.passed(), "{:?}", report.mismatches.first());
}

#[test]
fn built_discriminator_penalty_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for spec in [
        DiscriminatorSpec::compact(4, 16, [4, 4, 6, 6]),
        DiscriminatorSpec::large(4, 16, [4; 8]),
    ] {
        let mut d = build_discriminator::<f64>(&spec, &mut rng).unwrap();
        let (clean, fake) = batch(&mut rng, vec![2, 4, 16]);
        let opts = ParamCheck {
            max_per_tensor: Some(12),
            skip: vec![d.head_weight()],
        };
        let report = check_params(&mut d, 4, tol(), &opts, |n, g| {
            let mut alpha_rng = ChaCha8Rng::seed_from_u64(9);
            gradient_penalty(g, &clean, &fake, &mut alpha_rng, |g, x| {
                n.forward(g, x, Mode::Train, &mut Vec::new())
            })
        })
        .unwrap();
        assert!(report.passed(), "{:?}: {:?}", spec.kind, report.mismatches.first());
    }
}
