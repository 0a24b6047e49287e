//! Composite operations expressed through the primitive graph nodes.

use std::rc::Rc;

use rand::Rng;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    /// Log-softmax over the last axis.
    LogSoftmax,
    Identity,
}

impl<T: Real> Graph<T> {
    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::LeakyRelu(slope) => self.leaky_relu(x, T::lit(slope)),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::LogSoftmax => self.log_softmax(x),
            Activation::Identity => Ok(x),
        }
    }

    /// `x · w + b` for `x: [N, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.bias_add(y, b, 1),
            None => Ok(y),
        }
    }

    /// Non-overlapping max pooling over the last axis. Ties resolve to the
    /// lowest index; the backward pass routes gradient to the argmax only.
    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let t = *shape
            .last()
            .ok_or_else(|| Error::Shape("maxpool1d on empty shape".into()))?;
        if window == 0 || t < window {
            return Err(Error::Shape(format!(
                "maxpool1d: length {t} shorter than window {window}"
            )));
        }
        let t_out = t / window;
        let rows = self.value(x).numel() / t;
        let src = self.value(x).data();
        let mut idx = Vec::with_capacity(rows * t_out);
        for r in 0..rows {
            for o in 0..t_out {
                let start = r * t + o * window;
                let mut best = start;
                for j in start + 1..start + window {
                    if src[j] > src[best] {
                        best = j;
                    }
                }
                idx.push(best);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = t_out;
        self.gather(x, idx.into(), out_shape)
    }

    /// Inverted dropout: survivors are scaled by `1/(1−p)` so evaluation mode
    /// is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let shape = self.shape(x).to_vec();
        let n = self.value(x).numel();
        let rng = self.rng();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?)?;
        self.mul(x, m)
    }

    /// Mean negative log-likelihood of `labels` under row-wise log-probabilities.
    pub fn nll_loss(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(log_probs).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Shape(format!(
                "nll_loss: log-probs {shape:?} with {} labels",
                labels.len()
            )));
        }
        let c = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "nll_loss: label {bad} outside [0, {c})"
            )));
        }
        let idx: Rc<[usize]> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| i * c + l)
            .collect();
        let picked = self.gather(log_probs, idx, vec![labels.len()])?;
        let total = self.sum(picked)?;
        self.scale(total, T::lit(-1.0 / labels.len() as f64))
    }

    /// Splices `2·radius+1` neighbouring frames around every time step.
    ///
    /// `x` is `[F, T]` or `[B, F, T]`; the result is `[B·T, (2·radius+1)·F]`
    /// where column block `o` holds frame `t + o − radius`, clamped to the
    /// utterance edges.
    pub fn context_splice(&mut self, x: Var, radius: usize) -> Result<Var> {
        let (b, f, t) = match *self.shape(x) {
            [f, t] => (1, f, t),
            [b, f, t] => (b, f, t),
            ref s => {
                return Err(Error::Shape(format!(
                    "context_splice expects [F,T] or [B,F,T], got {s:?}"
                )))
            }
        };
        let idx = context_indices(b, f, t, radius);
        let width = (2 * radius + 1) * f;
        self.gather(x, idx.into(), vec![b * t, width])
    }
}

/// Flat gather indices implementing [`Graph::context_splice`].
pub fn context_indices(b: usize, f: usize, t: usize, radius: usize) -> Vec<usize> {
    let span = 2 * radius + 1;
    let mut idx = Vec::with_capacity(b * t * span * f);
    for bi in 0..b {
        for ti in 0..t {
            for o in 0..span {
                let src = (ti + o).saturating_sub(radius).min(t - 1);
                for fi in 0..f {
                    idx.push(bi * f * t + fi * t + src);
                }
            }
        }
    }
    idx
}
