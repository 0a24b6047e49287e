#![allow(dead_code)]

use std::time::{Duration, Instant};

use ggan::autodiff::gradcheck::{self, Report, Tolerance};
use ggan::models::*;
use ggan::nn::*;
use ggan::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct CheckOutcome {
    pub name: String,
    pub report: Report,
    pub elapsed: Duration,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed() && self.report.checked > 0
    }
}

pub fn tol() -> Tolerance {
    // A small step keeps the central difference from straddling ReLU kinks
    // and max-pool switches; f64 keeps round-off far below atol.
    Tolerance {
        step: 1e-6,
        ..Tolerance::default()
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces an arbitrary output to a scalar through fixed random weights.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y).to_vec());
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn timed(name: &str, f: impl FnOnce() -> Result<Report>) -> CheckOutcome {
    let start = Instant::now();
    let report = f().unwrap_or_else(|e| panic!("{name}: {e}"));
    CheckOutcome {
        name: name.to_string(),
        report,
        elapsed: start.elapsed(),
    }
}

fn merge(a: Report, b: Report) -> Report {
    let mut r = a;
    r.checked += b.checked;
    r.max_abs_err = r.max_abs_err.max(b.max_abs_err);
    r.mismatches.extend(b.mismatches);
    r
}

/// Wraps a bare [`ParamSet`] so layer checks can reuse `check_params`.
struct Holder(ParamSet<f64>);

impl Module<f64> for Holder {
    fn params(&self) -> &ParamSet<f64> {
        &self.0
    }
    fn params_mut(&mut self) -> &mut ParamSet<f64> {
        &mut self.0
    }
}

/// Checks the input gradient and every parameter gradient of `forward`.
fn check_module<N: Module<f64>>(
    net: &mut N,
    input: Tensor<f64>,
    opts: &ParamCheck,
    forward: impl Fn(&N, &mut Graph<f64>, Var) -> Result<Var>,
) -> Result<Report> {
    let wrt_input = gradcheck::check(&[input.clone()], 5, tol(), |g, v| {
        let y = forward(net, g, v[0])?;
        project(g, y, 99)
    })?;
    let wrt_params = check_params(net, 5, tol(), opts, |n, g| {
        let x = g.constant(input.clone())?;
        let y = forward(n, g, x)?;
        project(g, y, 99)
    })?;
    Ok(merge(wrt_input, wrt_params))
}

pub fn layer_checks() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    let all = ParamCheck::default();

    let mut ps = ParamSet::new();
    let conv = Conv1d::new(&mut ps, &mut rng, "c", 3, 4, 5, 2, 2);
    let x = rand_tensor(&mut rng, vec![2, 3, 9]);
    let mut h = Holder(ps);
    out.push(timed("layer conv1d", || {
        check_module(&mut h, x, &all, |n, g, v| conv.forward(&n.0, g, v))
    }));

    let mut ps = ParamSet::new();
    let convt = ConvTranspose1d::new(&mut ps, &mut rng, "t", 3, 2, 6, 2);
    let x = rand_tensor(&mut rng, vec![2, 3, 5]);
    let mut h = Holder(ps);
    out.push(timed("layer conv_transpose1d", || {
        check_module(&mut h, x, &all, |n, g, v| convt.forward(&n.0, g, v))
    }));

    let mut ps = ParamSet::new();
    let lin = Linear::new(&mut ps, &mut rng, "l", 6, 4);
    let x = rand_tensor(&mut rng, vec![3, 6]);
    let mut h = Holder(ps);
    out.push(timed("layer linear", || {
        check_module(&mut h, x, &all, |n, g, v| lin.forward(&n.0, g, v))
    }));

    for mode in [Mode::Train, Mode::Eval] {
        let mut ps = ParamSet::new();
        let bn = BatchNorm1d::new(&mut ps, "bn", 4);
        // Non-trivial gain, shift and running statistics.
        for (id, lo) in [(bn.gamma, 0.5), (bn.beta, -0.5), (bn.running_mean, -0.5), (bn.running_var, 0.5)] {
            let t = rand_tensor(&mut rng, vec![4]).map(|v| lo + v.abs());
            ps.set(id, t);
        }
        let x = rand_tensor(&mut rng, vec![5, 4]);
        let mut h = Holder(ps);
        out.push(timed(&format!("layer batchnorm ({mode:?})"), || {
            check_module(&mut h, x, &all, |n, g, v| bn.forward(&n.0, g, v, mode, &mut Vec::new()))
        }));
    }

    // The normalizing scale is detached by design, so the weight itself is
    // excluded here; its gradient rule is covered by the spectral unit tests.
    let mut ps = ParamSet::new();
    let sn = SpectralLinear::new(&mut ps, &mut rng, "sn", 6, 1);
    let x = rand_tensor(&mut rng, vec![3, 6]);
    let skip = ParamCheck {
        skip: vec![sn.linear.weight],
        ..ParamCheck::default()
    };
    let mut h = Holder(ps);
    out.push(timed("layer spectral linear", || {
        check_module(&mut h, x, &skip, |n, g, v| sn.forward(&n.0, g, v, Mode::Eval, &mut Vec::new()))
    }));

    let x = rand_tensor(&mut rng, vec![2, 3, 8]);
    out.push(timed("layer maxpool+dropout+leaky", || {
        gradcheck::check(&[x], 3, tol(), |g, v| {
            let y = g.leaky_relu(v[0], 0.2)?;
            let y = g.dropout(y, 0.3, true)?;
            let y = g.maxpool1d(y, 2)?;
            project(g, y, 1)
        })
    }));
    out
}

pub const TOY_F: usize = 8;
pub const TOY_H: usize = 16;
pub const TOY_W: usize = 32;
pub const TOY_C: usize = 10;

pub fn network_checks() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut out = Vec::new();
    let sampled = ParamCheck {
        max_per_tensor: Some(24),
        skip: vec![],
    };

    let spec = GeneratorSpec::fully_convolutional(TOY_F, TOY_H);
    let mut gen = build_fc_generator::<f64>(&spec, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, vec![2, TOY_F, 12]);
    out.push(timed("network fully-convolutional generator", || {
        check_module(&mut gen, x, &sampled, |n, g, v| n.forward(g, v))
    }));

    let spec = GeneratorSpec::encoder_decoder(TOY_F, [TOY_H; 5]);
    let mut gen = build_ed_generator::<f64>(&spec, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, vec![1, TOY_F, 27]);
    out.push(timed("network encoder-decoder generator", || {
        check_module(&mut gen, x, &sampled, |n, g, v| n.forward(g, v))
    }));

    let specs = [
        ("large", DiscriminatorSpec::large(TOY_F, TOY_W, [TOY_H; 8])),
        ("compact", DiscriminatorSpec::compact(TOY_F, TOY_W, [TOY_H; 4])),
    ];
    for (name, spec) in specs {
        let mut d = build_discriminator::<f64>(&spec, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, vec![2, TOY_F, TOY_W]);
        let opts = ParamCheck {
            skip: vec![d.head_weight()],
            ..sampled.clone()
        };
        for mode in [Mode::Train, Mode::Eval] {
            out.push(timed(&format!("network {name} discriminator ({mode:?})"), || {
                check_module(&mut d, x.clone(), &opts, |n, g, v| {
                    n.forward(g, v, mode, &mut Vec::new())
                })
            }));
        }
    }

    let spec = AcousticModelSpec::new(TOY_F, TOY_H, TOY_C);
    let mut am = build_acoustic_model::<f64>(&spec, &mut rng).unwrap();
    let x = rand_tensor(&mut rng, vec![1, TOY_F, 9]);
    let labels: Vec<usize> = (0..9).map(|i| (i * 7) % TOY_C).collect();
    for mode in [Mode::Train, Mode::Eval] {
        out.push(timed(&format!("network acoustic model ({mode:?})"), || {
            check_module(&mut am, x.clone(), &sampled, |n, g, v| {
                let lp = n.forward(g, v, mode, &mut Vec::new())?;
                g.nll_loss(lp, &labels)
            })
        }));
    }
    out
}
