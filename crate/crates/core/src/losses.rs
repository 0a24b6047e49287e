//! Adversarial losses with classifier guidance and the gradient penalty.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    SnGan,
    NsGan,
    WganGp,
}

impl std::str::FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sn-gan" | "sngan" => Ok(LossFamily::SnGan),
            "ns-gan" | "nsgan" => Ok(LossFamily::NsGan),
            "wgan-gp" | "wgangp" => Ok(LossFamily::WganGp),
            other => Err(Error::Config(format!("unknown loss family `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub family: LossFamily,
    /// Weight of the acoustic-model NLL in the generator loss.
    pub lambda: f64,
    /// Gradient-penalty weight; only read by the WGAN-GP family.
    #[serde(default)]
    pub lambda_gp: f64,
}

impl LossConfig {
    pub fn new(family: LossFamily, lambda: f64) -> Self {
        LossConfig {
            family,
            lambda,
            lambda_gp: if family == LossFamily::WganGp { 10.0 } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("guidance weight λ = {} must be ≥ 0", self.lambda)));
        }
        if !(self.lambda_gp.is_finite() && self.lambda_gp >= 0.0) {
            return Err(Error::Config(format!(
                "gradient-penalty weight λ_gp = {} must be ≥ 0",
                self.lambda_gp
            )));
        }
        Ok(())
    }

    pub fn uses_penalty(&self) -> bool {
        self.family == LossFamily::WganGp
    }
}

fn require_open_unit<T: Real>(g: &Graph<T>, v: Var, what: &str) -> Result<()> {
    if g.value(v).data().iter().any(|&p| p <= T::zero() || p >= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "{what} must lie strictly inside (0, 1) for the log-domain loss"
        )));
    }
    Ok(())
}

/// `−mean(log x)`.
fn neg_mean_log<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let l = g.log(x)?;
    let m = g.mean(l)?;
    g.neg(m)
}

/// Adversarial part of the generator loss (no guidance).
pub fn adversarial_generator_loss<T: Real>(g: &mut Graph<T>, family: LossFamily, d_fake: Var) -> Result<Var> {
    match family {
        LossFamily::SnGan | LossFamily::WganGp => {
            let m = g.mean(d_fake)?;
            g.neg(m)
        }
        LossFamily::NsGan => {
            require_open_unit(g, d_fake, "d_fake")?;
            neg_mean_log(g, d_fake)
        }
    }
}

/// Adversarial generator loss plus `λ` times the mean NLL of `labels` under
/// `am_log_probs`. With `λ = 0` the NLL is not evaluated at all.
pub fn generator_loss<T: Real>(
    g: &mut Graph<T>,
    cfg: &LossConfig,
    d_fake: Var,
    am_log_probs: Var,
    labels: &[usize],
) -> Result<Var> {
    cfg.validate()?;
    let adv = adversarial_generator_loss(g, cfg.family, d_fake)?;
    if cfg.lambda == 0.0 {
        return Ok(adv);
    }
    let nll = g.nll_loss(am_log_probs, labels)?;
    add_guidance(g, adv, nll, cfg.lambda)
}

/// `adv + λ·nll`, the single place the guidance term is combined.
pub fn add_guidance<T: Real>(g: &mut Graph<T>, adv: Var, nll: Var, lambda: f64) -> Result<Var> {
    let weighted = g.scale(nll, T::lit(lambda))?;
    g.add(adv, weighted)
}

/// Discriminator loss without the gradient penalty.
pub fn discriminator_loss<T: Real>(
    g: &mut Graph<T>,
    cfg: &LossConfig,
    d_real: Var,
    d_fake: Var,
) -> Result<Var> {
    match cfg.family {
        LossFamily::SnGan | LossFamily::WganGp => {
            let r = g.mean(d_real)?;
            let f = g.mean(d_fake)?;
            g.sub(f, r)
        }
        LossFamily::NsGan => {
            require_open_unit(g, d_real, "d_real")?;
            require_open_unit(g, d_fake, "d_fake")?;
            let real = neg_mean_log(g, d_real)?;
            let neg = g.neg(d_fake)?;
            let one_minus = g.shift(neg, T::one())?;
            let fake = neg_mean_log(g, one_minus)?;
            g.add(real, fake)
        }
    }
}

/// Adds `λ_gp · penalty` for WGAN-GP. Other families accept only an absent
/// or exactly zero penalty and return `base` untouched.
pub fn total_discriminator_loss<T: Real>(
    g: &mut Graph<T>,
    cfg: &LossConfig,
    base: Var,
    penalty: Option<Var>,
) -> Result<Var> {
    cfg.validate()?;
    match (cfg.family, penalty) {
        (LossFamily::WganGp, Some(p)) => {
            if cfg.lambda_gp == 0.0 {
                return Ok(base);
            }
            let w = g.scale(p, T::lit(cfg.lambda_gp))?;
            g.add(base, w)
        }
        (LossFamily::WganGp, None) => Err(Error::Config(
            "WGAN-GP discriminator loss needs a gradient penalty".into(),
        )),
        (_, Some(p)) if g.value(p).data().iter().any(|&v| v != T::zero()) => Err(Error::Config(
            format!("{:?} does not take a gradient penalty", cfg.family),
        )),
        _ => Ok(base),
    }
}

/// Mixes two `[B, …]` batches with one `α ~ U(0, 1)` per sample.
pub fn interpolate<T: Real>(
    x_clean: &Tensor<T>,
    x_fake: &Tensor<T>,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, Vec<f64>)> {
    if x_clean.shape() != x_fake.shape() || x_clean.rank() < 1 {
        return Err(Error::Shape(format!(
            "gradient penalty needs equal shapes, got {:?} and {:?}",
            x_clean.shape(),
            x_fake.shape()
        )));
    }
    let b = x_clean.shape()[0];
    let per = x_clean.numel() / b;
    let alphas: Vec<f64> = (0..b).map(|_| rng.gen::<f64>()).collect();
    let mut out = x_clean.clone();
    for (i, (o, (&c, &f))) in out
        .data_mut()
        .iter_mut()
        .zip(x_clean.data().iter().zip(x_fake.data()))
        .enumerate()
    {
        let a = T::lit(alphas[i / per]);
        *o = a * c + (T::one() - a) * f;
    }
    Ok((out, alphas))
}

/// Added inside the square root so the norm stays differentiable at zero.
pub const NORM_EPS: f64 = 1e-12;

/// `mean_b (‖∇ₓ D(x̂_b)‖₂ − 1)²` at per-sample interpolates `x̂`. The result
/// stays differentiable with respect to everything `d` binds.
pub fn gradient_penalty<T, D>(
    g: &mut Graph<T>,
    x_clean: &Tensor<T>,
    x_fake: &Tensor<T>,
    rng: &mut ChaCha8Rng,
    mut d: D,
) -> Result<Var>
where
    T: Real,
    D: FnMut(&mut Graph<T>, Var) -> Result<Var>,
{
    let (mixed, _) = interpolate(x_clean, x_fake, rng)?;
    let b = mixed.shape()[0];
    let x = g.input(mixed)?;
    let scores = d(g, x)?;
    let total = g.sum(scores)?;
    let grad = g.grad(total, &[x], true)?[0];
    let sq = g.square(grad)?;
    let per_sample = g.sum_rows(sq)?;
    let per_sample = g.shift(per_sample, T::lit(NORM_EPS))?;
    let norms = g.sqrt(per_sample)?;
    let dev = g.shift(norms, -T::one())?;
    let dev2 = g.square(dev)?;
    debug_assert_eq!(g.shape(dev2), &[b]);
    g.mean(dev2)
}
