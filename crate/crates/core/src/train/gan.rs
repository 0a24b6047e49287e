use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{finite, graph_seed, stream};
use crate::autodiff::Graph;
use crate::corpus::{chunk, Corpus};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss, generator_loss, gradient_penalty, total_discriminator_loss, LossConfig, LossFamily,
};
use crate::metrics::seer;
use crate::models::{
    build_discriminator, build_generator, AcousticModel, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec,
};
use crate::nn::{apply_updates, AdamConfig, AdamState, EarlyStopper, Mode, StopDecision};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub loss: LossConfig,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Chunks per minibatch, for both the clean and the noisy side.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without a new best dev SeER before stopping.
    pub patience: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Chunk length seen by the discriminator, and the hop between chunks.
    pub window: usize,
    pub hop: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Keep a copy of the generator at every evaluation.
    #[serde(default)]
    pub keep_snapshots: bool,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            loss: LossConfig::new(LossFamily::SnGan, 1.0),
            lr_g: 1e-3,
            lr_d: 1e-3,
            batch_size: 16,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            eval_every: 1,
            window: 32,
            hop: 16,
            adam: AdamConfig::default(),
            keep_snapshots: false,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("generator and discriminator lrs must be > 0".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 || self.window == 0 || self.hop == 0 {
            return Err(Error::Config(
                "batch size, eval interval, patience, window and hop must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanStepLog {
    pub step: usize,
    pub epoch: usize,
    pub l_g: f64,
    pub l_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanEpochLog {
    pub epoch: usize,
    /// Epoch means of the step losses; absent before training starts.
    pub l_g: Option<f64>,
    pub l_d: Option<f64>,
    pub dev_seer: Option<f64>,
    pub lr_g: f64,
    pub lr_d: f64,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub epoch: usize,
    pub step: usize,
    pub dev_seer: f64,
    pub generator: Generator,
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    /// Generator with the lowest logged dev SeER.
    pub generator: Generator,
    /// Generator after the last step, paired with `discriminator`.
    pub last_generator: Generator,
    pub discriminator: Discriminator,
    pub best_epoch: usize,
    pub best_seer: f64,
    pub epochs: Vec<GanEpochLog>,
    pub steps: Vec<GanStepLog>,
    pub g_steps: usize,
    pub d_steps: usize,
    pub am_fingerprint: String,
    pub snapshots: Vec<Snapshot>,
}

/// Initial networks for [`train_gan`].
#[derive(Clone, Debug)]
pub struct GanNetworks {
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Epoch the networks have reached; nonzero when resuming. Logged epoch
    /// and step numbers continue from it.
    pub start_epoch: usize,
}

impl GanNetworks {
    pub fn build(g: &GeneratorSpec, d: &DiscriminatorSpec, seed: u64) -> Result<Self> {
        Ok(GanNetworks {
            generator: build_generator(g, &mut stream(seed, 20))?,
            discriminator: build_discriminator(d, &mut stream(seed, 21))?,
            start_epoch: 0,
        })
    }
}

struct Pool {
    chunks: Vec<(Tensor, Vec<usize>)>,
    order: Vec<usize>,
    cursor: usize,
}

impl Pool {
    fn new(corpus: &Corpus, w: usize, hop: usize, what: &str) -> Result<Self> {
        let chunks: Vec<_> = corpus
            .utterances
            .iter()
            .flat_map(|u| chunk(u, w, hop))
            .map(|c| (c.frames, c.labels))
            .collect();
        if chunks.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{what} corpus has no utterance of at least {w} frames"
            )));
        }
        let order = (0..chunks.len()).collect();
        Ok(Pool {
            chunks,
            order,
            cursor: usize::MAX,
        })
    }

    /// Next `n` chunks of an endless sequence of shuffled passes.
    fn draw(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.cursor >= self.order.len() {
                    self.order.shuffle(rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let (f, w) = (self.chunks[0].0.shape()[0], self.chunks[0].0.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * f * w);
        let mut labels = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.chunks[i].0.data());
            labels.extend_from_slice(&self.chunks[i].1);
        }
        Ok((Tensor::new(vec![idx.len(), f, w], data)?, labels))
    }
}

fn generate(generator: &Generator, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new(0);
    let xv = g.constant(x.clone())?;
    let y = generator.forward(&mut g, xv)?;
    Ok(g.value(y).clone())
}

/// Adversarial training of `nets` with guidance from the frozen `am`.
///
/// Every step draws a clean batch and a noisy batch independently, takes one
/// Adam step on the discriminator and then one on the generator. The
/// generator loss adds `λ` times the acoustic model's NLL of the noisy
/// batch's labels on the enhanced frames. Dev SeER of `am` on enhanced
/// `dev` frames drives early stopping.
pub fn train_gan(
    clean: &Corpus,
    noisy: &Corpus,
    dev: &Corpus,
    am: &AcousticModel,
    nets: GanNetworks,
    cfg: &GanTrainConfig,
) -> Result<GanOutcome> {
    cfg.validate()?;
    if clean.features != noisy.features || noisy.features != am.spec.features {
        return Err(Error::InvalidArgument("clean, noisy and model feature counts differ".into()));
    }
    if nets.discriminator.spec.window != cfg.window {
        return Err(Error::Config(format!(
            "discriminator window {} differs from the chunk window {}",
            nets.discriminator.spec.window, cfg.window
        )));
    }
    let start = Instant::now();
    let am_fingerprint = am.params.fingerprint();
    let mut guide = am.clone();
    guide.params.set_frozen(true);

    let GanNetworks {
        mut generator,
        mut discriminator,
        start_epoch,
    } = nets;
    generator.params.set_frozen(false);
    discriminator.params.set_frozen(false);
    let mut adam_g = AdamState::new(&generator.params, cfg.adam);
    let mut adam_d = AdamState::new(&discriminator.params, cfg.adam);
    let mut clean_pool = Pool::new(clean, cfg.window, cfg.hop, "clean")?;
    let mut noisy_pool = Pool::new(noisy, cfg.window, cfg.hop, "noisy")?;
    let steps_per_epoch = noisy_pool.chunks.len().div_ceil(cfg.batch_size);
    let first_step = start_epoch * steps_per_epoch;
    let mut clean_rng = stream(cfg.seed, 30);
    let mut noisy_rng = stream(cfg.seed, 31);
    let mut graph_rng = stream(cfg.seed, 32);

    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut steps = Vec::new();
    let mut snapshots = Vec::new();
    let (mut g_steps, mut d_steps) = (0usize, 0usize);

    let mut evaluate = |epoch: usize,
                        step: usize,
                        generator: &Generator,
                        stopper: &mut EarlyStopper<(usize, Generator)>|
     -> Result<(f64, StopDecision)> {
        let s = seer(&guide, Some(generator), dev)?;
        if cfg.keep_snapshots {
            snapshots.push(Snapshot {
                epoch,
                step,
                dev_seer: s,
                generator: generator.clone(),
            });
        }
        Ok((s, stopper.update(s, (epoch, generator.clone()))))
    };

    let (s0, _) = evaluate(start_epoch, first_step, &generator, &mut stopper)?;
    epochs.push(GanEpochLog {
        epoch: start_epoch,
        l_g: None,
        l_d: None,
        dev_seer: Some(s0),
        lr_g: cfg.lr_g,
        lr_d: cfg.lr_d,
        wall_clock_s: start.elapsed().as_secs_f64(),
    });

    for local in 1..=cfg.max_epochs {
        let epoch = start_epoch + local;
        let (mut sum_g, mut sum_d) = (0.0, 0.0);
        for _ in 0..steps_per_epoch {
            let real_idx = clean_pool.draw(cfg.batch_size, &mut clean_rng);
            let noisy_idx = noisy_pool.draw(cfg.batch_size, &mut noisy_rng);
            let (x_real, _) = clean_pool.batch(&real_idx)?;
            let (x_noisy, labels) = noisy_pool.batch(&noisy_idx)?;

            // Discriminator step on detached generator output.
            let x_fake = generate(&generator, &x_noisy)?;
            let mut g = Graph::new(graph_seed(&mut graph_rng));
            let mut updates = Vec::new();
            let real = g.constant(x_real.clone())?;
            let fake = g.constant(x_fake.clone())?;
            let d_real = discriminator.forward(&mut g, real, Mode::Train, &mut updates)?;
            let d_fake = discriminator.forward(&mut g, fake, Mode::Train, &mut updates)?;
            let base = discriminator_loss(&mut g, &cfg.loss, d_real, d_fake)?;
            let penalty = if cfg.loss.uses_penalty() {
                let mut pen_rng = stream(graph_seed(&mut graph_rng), 33);
                let disc = &discriminator;
                Some(gradient_penalty(&mut g, &x_real, &x_fake, &mut pen_rng, |g, x| {
                    disc.forward(g, x, Mode::Train, &mut Vec::new())
                })?)
            } else {
                None
            };
            let l_d = total_discriminator_loss(&mut g, &cfg.loss, base, penalty)?;
            let l_d_value = finite(g.value(l_d).item() as f64, "discriminator loss")?;
            if cfg.loss.family == LossFamily::SnGan && l_d_value.abs() > 1.0 {
                return Err(Error::Internal(format!(
                    "SN-GAN discriminator loss {l_d_value} outside [−1, 1]"
                )));
            }
            let grads = g.backward(l_d)?;
            discriminator.params.zero_grad();
            discriminator.params.accumulate(&g, &grads);
            adam_d.step(&mut discriminator.params, cfg.lr_d)?;
            apply_updates(&mut discriminator.params, updates);
            d_steps += 1;

            // Generator step; the discriminator and the guide are constants.
            let mut g = Graph::new(graph_seed(&mut graph_rng));
            let xn = g.constant(x_noisy)?;
            let x_hat = generator.forward(&mut g, xn)?;
            discriminator.params.set_frozen(true);
            let d_fake = discriminator.forward(&mut g, x_hat, Mode::Train, &mut Vec::new());
            discriminator.params.set_frozen(false);
            let d_fake = d_fake?;
            let lp = if cfg.loss.lambda == 0.0 {
                d_fake
            } else {
                guide.forward(&mut g, x_hat, Mode::Eval, &mut Vec::new())?
            };
            let l_g = generator_loss(&mut g, &cfg.loss, d_fake, lp, &labels)?;
            let l_g_value = finite(g.value(l_g).item() as f64, "generator loss")?;
            let grads = g.backward(l_g)?;
            generator.params.zero_grad();
            generator.params.accumulate(&g, &grads);
            adam_g.step(&mut generator.params, cfg.lr_g)?;
            g_steps += 1;

            if g_steps != d_steps {
                return Err(Error::Internal("generator and discriminator step counts diverged".into()));
            }
            sum_g += l_g_value;
            sum_d += l_d_value;
            steps.push(GanStepLog {
                step: first_step + g_steps,
                epoch,
                l_g: l_g_value,
                l_d: l_d_value,
            });
        }
        let mut entry = GanEpochLog {
            epoch,
            l_g: Some(sum_g / steps_per_epoch as f64),
            l_d: Some(sum_d / steps_per_epoch as f64),
            dev_seer: None,
            lr_g: cfg.lr_g,
            lr_d: cfg.lr_d,
            wall_clock_s: 0.0,
        };
        let mut stop = false;
        if local % cfg.eval_every == 0 || local == cfg.max_epochs {
            let (s, decision) = evaluate(epoch, first_step + g_steps, &generator, &mut stopper)?;
            entry.dev_seer = Some(s);
            stop = decision == StopDecision::Stop;
        }
        entry.wall_clock_s = start.elapsed().as_secs_f64();
        epochs.push(entry);
        if stop {
            break;
        }
    }

    if am.params.fingerprint() != am_fingerprint || guide.params.fingerprint() != am_fingerprint {
        return Err(Error::Internal("the guiding acoustic model changed during GAN training".into()));
    }
    let (best_seer, (best_epoch, mut best)) = stopper.into_best().expect("the initial networks are always evaluated");
    best.params.zero_grad();
    generator.params.zero_grad();
    discriminator.params.zero_grad();
    Ok(GanOutcome {
        generator: best,
        last_generator: generator,
        discriminator,
        best_epoch,
        best_seer,
        epochs,
        steps,
        g_steps,
        d_steps,
        am_fingerprint,
        snapshots,
    })
}
