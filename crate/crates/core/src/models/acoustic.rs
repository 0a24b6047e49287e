use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, Linear, Mode, ParamSet, StateUpdate};
use crate::tensor::{Real, Tensor};

pub const CONTEXT_RADIUS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcousticModelSpec {
    pub features: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub senones: usize,
    #[serde(default = "default_radius")]
    pub context_radius: usize,
    pub dropout: f64,
}

fn default_radius() -> usize {
    CONTEXT_RADIUS
}

impl AcousticModelSpec {
    pub fn new(features: usize, hidden_units: usize, senones: usize) -> Self {
        AcousticModelSpec {
            features,
            hidden_layers: 5,
            hidden_units,
            senones,
            context_radius: CONTEXT_RADIUS,
            dropout: 0.1,
        }
    }

    /// The full-width configuration: five layers of 1024 units.
    pub fn paper_scale(features: usize, senones: usize) -> Self {
        Self::new(features, 1024, senones)
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.context_radius + 1) * self.features
    }

    pub fn validate(&self) -> Result<()> {
        if self.senones < 2 {
            return Err(Error::Config("acoustic model needs at least 2 senones".into()));
        }
        if self.features == 0 || self.hidden_layers == 0 || self.hidden_units == 0 {
            return Err(Error::Config("acoustic model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Hidden {
    linear: Linear,
    norm: BatchNorm1d,
}

/// Context-window MLP producing per-frame senone log-probabilities.
#[derive(Clone, Debug)]
pub struct AcousticModel<T: Real = f32> {
    pub spec: AcousticModelSpec,
    pub params: ParamSet<T>,
    hidden: Vec<Hidden>,
    output: Linear,
}

pub fn build_acoustic_model<T: Real>(
    spec: &AcousticModelSpec,
    rng: &mut ChaCha8Rng,
) -> Result<AcousticModel<T>> {
    spec.validate()?;
    let mut ps = ParamSet::new();
    let mut fan_in = spec.input_dim();
    let mut hidden = Vec::with_capacity(spec.hidden_layers);
    for i in 0..spec.hidden_layers {
        let name = format!("hidden{}", i + 1);
        let linear = Linear::new(&mut ps, rng, &name, fan_in, spec.hidden_units);
        let norm = BatchNorm1d::new(&mut ps, &format!("{name}.bn"), spec.hidden_units);
        hidden.push(Hidden { linear, norm });
        fan_in = spec.hidden_units;
    }
    let output = Linear::new(&mut ps, rng, "output", fan_in, spec.senones);
    Ok(AcousticModel {
        spec: spec.clone(),
        params: ps,
        hidden,
        output,
    })
}

impl<T: Real> AcousticModel<T> {
    /// `x` is an already spliced `[N, (2r+1)·F]` matrix.
    pub fn forward_spliced(
        &self,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StateUpdate<T>>,
    ) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "acoustic model expects [N, {}], got {shape:?}",
                self.spec.input_dim()
            )));
        }
        let mut h = x;
        for layer in &self.hidden {
            h = layer.linear.forward(&self.params, g, h)?;
            h = layer.norm.forward(&self.params, g, h, mode, updates)?;
            h = g.relu(h)?;
            h = g.dropout(h, self.spec.dropout, mode.training())?;
        }
        let logits = self.output.forward(&self.params, g, h)?;
        g.log_softmax(logits)
    }

    /// `frames` is `[F, T]` or `[B, F, T]`; rows of the result are ordered by
    /// batch then time.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        frames: Var,
        mode: Mode,
        updates: &mut Vec<StateUpdate<T>>,
    ) -> Result<Var> {
        let x = g.context_splice(frames, self.spec.context_radius)?;
        self.forward_spliced(g, x, mode, updates)
    }

    /// Eval-mode log-probabilities for one `[F, T]` utterance.
    pub fn log_probs(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(0);
        let x = g.constant(frames.clone())?;
        let y = self.forward(&mut g, x, Mode::Eval, &mut Vec::new())?;
        Ok(g.value(y).clone())
    }

    /// Arg-max senone per frame, lowest index on ties.
    pub fn predict(&self, frames: &Tensor<T>) -> Result<Vec<usize>> {
        let lp = self.log_probs(frames)?;
        Ok(argmax_rows(&lp))
    }

    pub fn cast<U: Real>(&self) -> AcousticModel<U> {
        AcousticModel {
            spec: self.spec.clone(),
            params: self.params.cast(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
        }
    }
}

pub fn argmax_rows<T: Real>(m: &Tensor<T>) -> Vec<usize> {
    let c = *m.shape().last().unwrap_or(&1);
    m.data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
