use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, ConvTranspose1d, ParamSet};
use crate::tensor::{Real, Tensor};

pub const ED_KERNELS_ENC: [usize; 5] = [7, 7, 5, 5, 3];
pub const ED_KERNELS_DEC: [usize; 5] = [4, 5, 6, 6, 6];
/// Total encoder downsampling, `2⁵`.
pub const ED_MULTIPLE: usize = 32;
const FC_KERNEL: usize = 5;
const FC_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    FullyConvolutional,
    EncoderDecoder,
}

/// `channels` holds the four hidden widths of the fully-convolutional
/// generator, or the five encoder widths of the encoder-decoder (the decoder
/// mirrors them).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub features: usize,
    pub channels: Vec<usize>,
}

impl GeneratorSpec {
    pub fn fully_convolutional(features: usize, hidden: usize) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::FullyConvolutional,
            features,
            channels: vec![hidden; 4],
        }
    }

    /// Fully-convolutional generator with the default width `h = 2F`.
    pub fn default_fc(features: usize) -> Self {
        Self::fully_convolutional(features, 2 * features)
    }

    pub fn encoder_decoder(features: usize, channels: [usize; 5]) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::EncoderDecoder,
            features,
            channels: channels.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            GeneratorKind::FullyConvolutional => 4,
            GeneratorKind::EncoderDecoder => 5,
        };
        if self.features == 0 {
            return Err(Error::Config("generator needs at least one feature".into()));
        }
        if self.channels.len() != want || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "{:?} generator needs {want} positive channel widths, got {:?}",
                self.kind, self.channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Body {
    Fc(Vec<Conv1d>),
    Ed {
        enc: Vec<Conv1d>,
        dec: Vec<ConvTranspose1d>,
    },
}

/// A feature-enhancement network mapping `[B, F, T]` to `[B, F, T]`.
#[derive(Clone, Debug)]
pub struct Generator<T: Real = f32> {
    pub spec: GeneratorSpec,
    pub params: ParamSet<T>,
    body: Body,
}

pub fn build_generator<T: Real>(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Generator<T>> {
    match spec.kind {
        GeneratorKind::FullyConvolutional => build_fc_generator(spec, rng),
        GeneratorKind::EncoderDecoder => build_ed_generator(spec, rng),
    }
}

pub fn build_fc_generator<T: Real>(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Generator<T>> {
    spec.validate()?;
    let mut ps = ParamSet::new();
    let f = spec.features;
    let widths: Vec<usize> = std::iter::once(f)
        .chain(spec.channels.iter().copied())
        .chain(std::iter::once(f))
        .collect();
    let convs = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            Conv1d::new(&mut ps, rng, &format!("conv{}", i + 1), w[0], w[1], FC_KERNEL, 1, FC_KERNEL / 2)
        })
        .collect();
    Ok(Generator {
        spec: spec.clone(),
        params: ps,
        body: Body::Fc(convs),
    })
}

pub fn build_ed_generator<T: Real>(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Generator<T>> {
    spec.validate()?;
    let mut ps = ParamSet::new();
    let f = spec.features;
    let e = &spec.channels;
    let mut enc = Vec::with_capacity(5);
    let mut cin = f;
    for (i, (&k, &cout)) in ED_KERNELS_ENC.iter().zip(e).enumerate() {
        enc.push(Conv1d::new(&mut ps, rng, &format!("enc{}", i + 1), cin, cout, k, 2, k / 2));
        cin = cout;
    }
    let mut dec = Vec::with_capacity(5);
    for (i, &k) in ED_KERNELS_DEC.iter().enumerate() {
        // Decoder i upsamples to the width of encoder 5−i, whose output is
        // then spliced on; the last decoder returns to F channels.
        let cin = if i == 0 { e[4] } else { 2 * e[4 - i] };
        let cout = if i == 4 { f } else { e[3 - i] };
        dec.push(ConvTranspose1d::new(&mut ps, rng, &format!("dec{}", i + 1), cin, cout, k, 2));
    }
    Ok(Generator {
        spec: spec.clone(),
        params: ps,
        body: Body::Ed { enc, dec },
    })
}

/// Time extents of the five encoder outputs for an input of length `t`.
pub fn ed_encoder_lengths(t: usize) -> Vec<usize> {
    let mut len = t;
    ED_KERNELS_ENC
        .iter()
        .map(|&k| {
            len = (len + 2 * (k / 2) - k) / 2 + 1;
            len
        })
        .collect()
}

/// Mirror index for reflect padding that may exceed the signal length.
fn reflect(i: isize, t: usize) -> usize {
    if t == 1 {
        return 0;
    }
    let period = 2 * (t as isize - 1);
    let m = i.rem_euclid(period);
    (if m < t as isize { m } else { period - m }) as usize
}

impl<T: Real> Generator<T> {
    pub fn features(&self) -> usize {
        self.spec.features
    }

    /// `x` is `[B, F, T]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.spec.features {
            return Err(Error::Shape(format!(
                "generator with F={} got input {shape:?}",
                self.spec.features
            )));
        }
        match &self.body {
            Body::Fc(convs) => {
                let mut h = x;
                for (i, c) in convs.iter().enumerate() {
                    h = c.forward(&self.params, g, h)?;
                    if i + 1 < convs.len() {
                        h = g.leaky_relu(h, T::lit(FC_SLOPE))?;
                    }
                }
                Ok(h)
            }
            Body::Ed { enc, dec } => self.forward_ed(g, x, &shape, enc, dec),
        }
    }

    fn forward_ed(
        &self,
        g: &mut Graph<T>,
        x: Var,
        shape: &[usize],
        enc: &[Conv1d],
        dec: &[ConvTranspose1d],
    ) -> Result<Var> {
        let (b, f, t) = (shape[0], shape[1], shape[2]);
        let padded = t.div_ceil(ED_MULTIPLE) * ED_MULTIPLE;
        let left = (padded - t) / 2;
        let x = if padded == t {
            x
        } else {
            let mut idx = Vec::with_capacity(b * f * padded);
            for row in 0..b * f {
                for j in 0..padded {
                    idx.push(row * t + reflect(j as isize - left as isize, t));
                }
            }
            g.gather(x, Rc::from(idx), vec![b, f, padded])?
        };
        if padded % ED_MULTIPLE != 0 {
            return Err(Error::Internal(format!("padded length {padded} not a multiple of 32")));
        }

        let mut skips = Vec::with_capacity(5);
        let mut h = x;
        for c in enc {
            h = c.forward(&self.params, g, h)?;
            h = g.relu(h)?;
            skips.push(h);
        }
        for (i, d) in dec.iter().enumerate() {
            h = d.forward(&self.params, g, h)?;
            let target = if i == 4 {
                padded
            } else {
                g.shape(skips[3 - i])[2]
            };
            let natural = g.shape(h)[2];
            if natural < target {
                return Err(Error::Internal(format!(
                    "decoder {} produced {natural} frames, need {target}",
                    i + 1
                )));
            }
            if natural > target {
                h = g.slice(h, 2, (natural - target) / 2, target)?;
            }
            if i < 4 {
                h = g.relu(h)?;
                h = g.concat(h, skips[3 - i], 1)?;
            }
        }
        if padded != t {
            h = g.slice(h, 2, left, t)?;
        }
        Ok(h)
    }

    /// Sets the output layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let last = match &self.body {
            Body::Fc(c) => (c[4].weight, c[4].bias),
            Body::Ed { dec, .. } => (dec[4].weight, dec[4].bias),
        };
        for id in [last.0, last.1] {
            let z = Tensor::zeros(self.params.get(id).shape().to_vec());
            self.params.set(id, z);
        }
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            spec: self.spec.clone(),
            params: self.params.cast(),
            body: self.body.clone(),
        }
    }
}

/// Runs the generator on one `[F, T]` utterance outside any training graph.
pub fn enhance<T: Real>(generator: &Generator<T>, frames: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = frames.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("enhance expects [F, T], got {shape:?}")));
    }
    let mut g = Graph::new(0);
    let x = g.constant(frames.clone().reshape(vec![1, shape[0], shape[1]])?)?;
    let y = generator.forward(&mut g, x)?;
    g.value(y).clone().reshape(shape)
}
