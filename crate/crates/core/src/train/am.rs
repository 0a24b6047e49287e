use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{finite, graph_seed, stream};
use crate::autodiff::Graph;
use crate::corpus::{context_window, mtr_perturb, Corpus, PerturbKind, PerturbSpec};
use crate::error::{Error, Result};
use crate::metrics::seer;
use crate::models::{build_acoustic_model, enhance, AcousticModel, AcousticModelSpec, Generator};
use crate::nn::{apply_updates, sgd_step, EarlyStopper, Mode, PlateauScheduler, StopDecision};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmTrainConfig {
    /// Frames per minibatch.
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Relative dev improvement below which the learning rate halves.
    #[serde(default = "default_threshold")]
    pub plateau_threshold: f64,
    /// Epochs without a new best dev SeER before stopping.
    pub patience: usize,
    pub seed: u64,
}

fn default_threshold() -> f64 {
    0.001
}

impl Default for AmTrainConfig {
    fn default() -> Self {
        AmTrainConfig {
            batch_size: 128,
            lr: 0.1,
            max_epochs: 12,
            plateau_threshold: default_threshold(),
            patience: 4,
            seed: 0,
        }
    }
}

impl AmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.patience == 0 || !(self.plateau_threshold >= 0.0) {
            return Err(Error::Config(
                "acoustic-model training needs batch size, lr and patience > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmEpochLog {
    pub epoch: usize,
    /// Mean training NLL; absent for the evaluation before any update.
    pub train_loss: Option<f64>,
    pub dev_seer: f64,
    /// Learning rate used for this epoch's updates.
    pub lr: f64,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct AmOutcome {
    /// The parameters with the lowest dev SeER (earliest on ties).
    pub model: AcousticModel,
    pub best_epoch: usize,
    pub best_seer: f64,
    pub log: Vec<AmEpochLog>,
}

/// Row-major `[N, (2r+1)·F]` inputs and their labels.
fn spliced_rows(corpus: &Corpus, radius: usize) -> (Vec<f32>, Vec<usize>, usize) {
    let dim = (2 * radius + 1) * corpus.features;
    let mut rows = Vec::with_capacity(corpus.total_frames() * dim);
    let mut labels = Vec::with_capacity(corpus.total_frames());
    for u in &corpus.utterances {
        let w = context_window(&u.frames, radius);
        let t = u.len();
        let d = w.data();
        for ti in 0..t {
            rows.extend((0..dim).map(|k| d[k * t + ti]));
        }
        labels.extend_from_slice(&u.labels);
    }
    (rows, labels, dim)
}

fn check_compatible(model: &AcousticModel, corpus: &Corpus, what: &str) -> Result<()> {
    if model.spec.features != corpus.features || model.spec.senones != corpus.senones {
        return Err(Error::InvalidArgument(format!(
            "{what} corpus (F={}, C={}) does not match the model (F={}, C={})",
            corpus.features, corpus.senones, model.spec.features, model.spec.senones
        )));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} corpus is empty")));
    }
    Ok(())
}

/// Trains `model` further with SGD and the plateau scheduler. Dev SeER is
/// measured before the first update and after every epoch; the returned
/// model is the best of those evaluations.
pub fn fit_acoustic_model(
    model: AcousticModel,
    train: &Corpus,
    dev: &Corpus,
    cfg: &AmTrainConfig,
) -> Result<AmOutcome> {
    cfg.validate()?;
    check_compatible(&model, train, "training")?;
    check_compatible(&model, dev, "dev")?;
    let start = Instant::now();
    let (rows, labels, dim) = spliced_rows(train, model.spec.context_radius);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = stream(cfg.seed, 11);
    let mut sched = PlateauScheduler::new(cfg.lr).with_threshold(cfg.plateau_threshold);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut model = model;
    model.params.set_frozen(false);

    let s0 = seer(&model, None, dev)?;
    let mut log = vec![AmEpochLog {
        epoch: 0,
        train_loss: None,
        dev_seer: s0,
        lr: cfg.lr,
        wall_clock_s: start.elapsed().as_secs_f64(),
    }];
    let mut lr = sched.update(s0);
    stopper.update(s0, model.clone());

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(idx.len() * dim);
            let mut y = Vec::with_capacity(idx.len());
            for &i in idx {
                data.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
                y.push(labels[i]);
            }
            let mut g = Graph::new(graph_seed(&mut rng));
            let x = g.constant(Tensor::new(vec![idx.len(), dim], data)?)?;
            let mut updates = Vec::new();
            let lp = model.forward_spliced(&mut g, x, Mode::Train, &mut updates)?;
            let loss = g.nll_loss(lp, &y)?;
            loss_sum += finite(g.value(loss).item() as f64, "acoustic-model loss")?;
            batches += 1;
            let grads = g.backward(loss)?;
            model.params.zero_grad();
            model.params.accumulate(&g, &grads);
            sgd_step(&mut model.params, lr)?;
            apply_updates(&mut model.params, updates);
        }
        let s = seer(&model, None, dev)?;
        log.push(AmEpochLog {
            epoch,
            train_loss: Some(loss_sum / batches.max(1) as f64),
            dev_seer: s,
            lr,
            wall_clock_s: start.elapsed().as_secs_f64(),
        });
        lr = sched.update(s);
        if stopper.update(s, model.clone()) == StopDecision::Stop {
            break;
        }
    }
    let (best_seer, mut best) = stopper.into_best().expect("epoch 0 is always recorded");
    let best_epoch = log
        .iter()
        .find(|l| l.dev_seer == best_seer)
        .map(|l| l.epoch)
        .unwrap_or(0);
    best.params.zero_grad();
    Ok(AmOutcome {
        model: best,
        best_epoch,
        best_seer,
        log,
    })
}

/// Trains a freshly initialized acoustic model.
pub fn train_acoustic_model(
    spec: &AcousticModelSpec,
    train: &Corpus,
    dev: &Corpus,
    cfg: &AmTrainConfig,
) -> Result<AmOutcome> {
    let model = build_acoustic_model(spec, &mut stream(cfg.seed, 10))?;
    fit_acoustic_model(model, train, dev, cfg)
}

/// Continues training `am` on generator-enhanced features. Dev frames are
/// enhanced the same way, so the first logged SeER is that of the
/// generator-only pipeline.
pub fn fine_tune(
    am: &AcousticModel,
    generator: &Generator,
    noisy_train: &Corpus,
    dev: &Corpus,
    cfg: &AmTrainConfig,
) -> Result<AmOutcome> {
    let enhanced = |c: &Corpus| {
        c.map(|_, u| {
            let mut v = u.clone();
            v.frames = enhance(generator, &u.frames)?;
            Ok(v)
        })
    };
    let train = enhanced(noisy_train)?;
    let dev = enhanced(dev)?;
    fit_acoustic_model(am.clone(), &train, &dev, cfg)
}

#[derive(Clone, Debug)]
pub struct MtrOutcome {
    pub am: AmOutcome,
    /// Utterances in the augmented training set.
    pub train_utterances: usize,
    pub train_frames: usize,
}

/// Trains an acoustic model on `noisy_train` plus one perturbed copy per
/// entry of `sets`: `[Speed, Volume]` gives "+s+v", `[Both]` gives "+sv".
pub fn train_mtr_baseline(
    spec: &AcousticModelSpec,
    noisy_train: &Corpus,
    perturb: &PerturbSpec,
    sets: &[PerturbKind],
    dev: &Corpus,
    cfg: &AmTrainConfig,
) -> Result<MtrOutcome> {
    let mut train = noisy_train.clone();
    for &kind in sets {
        train.extend(noisy_train.map(|i, u| mtr_perturb(u, i, perturb, kind))?);
    }
    let am = train_acoustic_model(spec, &train, dev, cfg)?;
    Ok(MtrOutcome {
        am,
        train_utterances: train.len(),
        train_frames: train.total_frames(),
    })
}
