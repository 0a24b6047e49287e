use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Mode, ParamSet, SpectralLinear, StateUpdate};
use crate::tensor::Real;

const SLOPE: f64 = 0.2;
/// Shortest window the pooling pyramid accepts (four halvings).
pub const MIN_WINDOW: usize = 16;
/// Windows shorter than the first large-discriminator kernel are zero-padded
/// up to it.
pub const LARGE_FIRST_KERNEL: usize = 41;
const LARGE_KERNEL: usize = 13;
const COMPACT_KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorKind {
    Large,
    Compact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub kind: DiscriminatorKind,
    pub features: usize,
    pub window: usize,
    /// Eight widths for the large kind, four for the compact kind.
    pub channels: Vec<usize>,
    /// Per-layer dropout probabilities, same length as `channels`.
    pub dropout: Vec<f64>,
}

impl DiscriminatorSpec {
    pub fn large(features: usize, window: usize, channels: [usize; 8]) -> Self {
        let mut dropout = vec![0.0; 8];
        dropout[0] = 0.3;
        dropout[1] = 0.3;
        DiscriminatorSpec {
            kind: DiscriminatorKind::Large,
            features,
            window,
            channels: channels.to_vec(),
            dropout,
        }
    }

    pub fn compact(features: usize, window: usize, channels: [usize; 4]) -> Self {
        DiscriminatorSpec {
            kind: DiscriminatorKind::Compact,
            features,
            window,
            channels: channels.to_vec(),
            dropout: vec![0.25, 0.25, 0.25, 0.0],
        }
    }

    fn depth(&self) -> usize {
        match self.kind {
            DiscriminatorKind::Large => 8,
            DiscriminatorKind::Compact => 4,
        }
    }

    /// Window length after the large kind's zero padding.
    pub fn padded_window(&self) -> usize {
        match self.kind {
            DiscriminatorKind::Large => self.window.max(LARGE_FIRST_KERNEL),
            DiscriminatorKind::Compact => self.window,
        }
    }

    /// Flattened length entering the fully-connected head.
    pub fn fc_inputs(&self) -> usize {
        let pooled = (0..4).fold(self.padded_window(), |l, _| l / 2);
        self.channels.last().copied().unwrap_or(0) * pooled
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.depth();
        if self.features == 0 || self.channels.len() != d || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "{:?} discriminator needs F ≥ 1 and {d} positive widths",
                self.kind
            )));
        }
        if self.dropout.len() != d || self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!(
                "discriminator needs {d} dropout probabilities in [0, 1)"
            )));
        }
        if self.window < MIN_WINDOW {
            return Err(Error::Config(format!(
                "window {} too small for the pooling pyramid (need ≥ {MIN_WINDOW})",
                self.window
            )));
        }
        Ok(())
    }
}

/// Maps `[B, F, W]` windows to `[B]` scores in `(0, 1)`.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real = f32> {
    pub spec: DiscriminatorSpec,
    pub params: ParamSet<T>,
    convs: Vec<Conv1d>,
    head: SpectralLinear,
}

pub fn build_discriminator<T: Real>(
    spec: &DiscriminatorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Discriminator<T>> {
    spec.validate()?;
    let mut ps = ParamSet::new();
    let mut convs = Vec::new();
    let mut cin = spec.features;
    for (i, &cout) in spec.channels.iter().enumerate() {
        let k = match spec.kind {
            DiscriminatorKind::Large if i == 0 => LARGE_FIRST_KERNEL,
            DiscriminatorKind::Large => LARGE_KERNEL,
            DiscriminatorKind::Compact => COMPACT_KERNEL,
        };
        convs.push(Conv1d::new(&mut ps, rng, &format!("conv{}", i + 1), cin, cout, k, 1, k / 2));
        cin = cout;
    }
    let head = SpectralLinear::new(&mut ps, rng, "fc", spec.fc_inputs(), 1);
    Ok(Discriminator {
        spec: spec.clone(),
        params: ps,
        convs,
        head,
    })
}

pub fn build_large_discriminator<T: Real>(
    spec: &DiscriminatorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Discriminator<T>> {
    if spec.kind != DiscriminatorKind::Large {
        return Err(Error::Config("expected a large discriminator spec".into()));
    }
    build_discriminator(spec, rng)
}

pub fn build_compact_discriminator<T: Real>(
    spec: &DiscriminatorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Discriminator<T>> {
    if spec.kind != DiscriminatorKind::Compact {
        return Err(Error::Config("expected a compact discriminator spec".into()));
    }
    build_discriminator(spec, rng)
}

impl<T: Real> Discriminator<T> {
    fn pools_after(&self, layer: usize) -> bool {
        match self.spec.kind {
            DiscriminatorKind::Large => layer % 2 == 1,
            DiscriminatorKind::Compact => true,
        }
    }

    /// Power-iteration vector updates are pushed to `updates` in training
    /// mode; the caller applies them once the step is done.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StateUpdate<T>>,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let s = &self.spec;
        if shape.len() != 3 || shape[1] != s.features || shape[2] != s.window {
            return Err(Error::Shape(format!(
                "discriminator expects [B, {}, {}], got {shape:?}",
                s.features, s.window
            )));
        }
        let b = shape[0];
        let mut h = self.pad(g, x)?;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&self.params, g, h)?;
            h = g.leaky_relu(h, T::lit(SLOPE))?;
            h = g.dropout(h, s.dropout[i], mode.training())?;
            if self.pools_after(i) {
                h = g.maxpool1d(h, 2)?;
            }
        }
        let flat = g.reshape(h, vec![b, s.fc_inputs()])?;
        let logit = self.head.forward(&self.params, g, flat, mode, updates)?;
        let p = g.sigmoid(logit)?;
        g.reshape(p, vec![b])
    }

    fn pad(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = self.spec.window;
        let wp = self.spec.padded_window();
        if wp == w {
            return Ok(x);
        }
        let shape = g.shape(x).to_vec();
        let rows = shape[0] * shape[1];
        let left = (wp - w) / 2;
        let idx: Vec<usize> = (0..rows)
            .flat_map(|r| (0..w).map(move |j| r * wp + left + j))
            .collect();
        g.scatter_add(x, Rc::from(idx), vec![shape[0], shape[1], wp])
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec.clone(),
            params: self.params.cast(),
            convs: self.convs.clone(),
            head: self.head.clone(),
        }
    }

    /// Parameter id of the spectrally normalized head weight.
    pub fn head_weight(&self) -> crate::nn::ParamId {
        self.head.linear.weight
    }
}
