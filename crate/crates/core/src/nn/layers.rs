//! Parameterized layers. Each layer only stores [`ParamId`]s; the tensors
//! live in the owning network's [`ParamSet`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::{ParamId, ParamSet};
use super::spectral;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn training(self) -> bool {
        self == Mode::Train
    }
}

/// A pending write to a buffer, produced by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct StateUpdate<T: Real> {
    pub id: ParamId,
    pub value: Tensor<T>,
}

pub fn apply_updates<T: Real>(ps: &mut ParamSet<T>, updates: Vec<StateUpdate<T>>) {
    for u in updates {
        ps.set(u.id, u.value);
    }
}

/// `U(−1/√fan_in, 1/√fan_in)`, the default used by common frameworks.
pub fn uniform_init<T: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("init shape")
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = cin * kernel;
        let weight = ps.add(
            format!("{name}.weight"),
            uniform_init(rng, vec![cout, cin, kernel], fan_in),
        );
        let bias = ps.add(format!("{name}.bias"), uniform_init(rng, vec![cout], fan_in));
        Conv1d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    /// `x` is `[B, C, T]`.
    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = ps.bind(g, self.weight)?;
        let b = ps.bind(g, self.bias)?;
        let y = g.conv1d(x, w, self.stride, self.pad)?;
        let axis = g.shape(y).len() - 2;
        g.bias_add(y, b, axis)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl ConvTranspose1d {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = cout * kernel;
        let weight = ps.add(
            format!("{name}.weight"),
            uniform_init(rng, vec![cin, cout, kernel], fan_in),
        );
        let bias = ps.add(format!("{name}.bias"), uniform_init(rng, vec![cout], fan_in));
        ConvTranspose1d {
            weight,
            bias,
            stride,
        }
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = ps.bind(g, self.weight)?;
        let b = ps.bind(g, self.bias)?;
        let y = g.conv_transpose1d(x, w, self.stride, 0, None)?;
        let axis = g.shape(y).len() - 2;
        g.bias_add(y, b, axis)
    }
}

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let weight = ps.add(
            format!("{name}.weight"),
            uniform_init(rng, vec![fan_in, fan_out], fan_in),
        );
        let bias = ps.add(format!("{name}.bias"), uniform_init(rng, vec![fan_out], fan_in));
        Linear { weight, bias }
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = ps.bind(g, self.weight)?;
        let b = ps.bind(g, self.bias)?;
        g.affine(x, w, Some(b))
    }
}

/// Linear layer whose weight is divided by a power-iteration estimate of its
/// largest singular value before use.
#[derive(Clone, Debug)]
pub struct SpectralLinear {
    pub linear: Linear,
    pub u: ParamId,
    pub iterations: usize,
}

impl SpectralLinear {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let linear = Linear::new(ps, rng, name, fan_in, fan_out);
        // The weight is stored [in, out]; singular values do not depend on the
        // orientation, and u lives in the row space of length `fan_in`.
        let u = spectral::random_unit::<T>(rng, fan_in);
        let u = ps.add_buffer(format!("{name}.sn_u"), u);
        SpectralLinear {
            linear,
            u,
            iterations: 1,
        }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamSet<T>,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StateUpdate<T>>,
    ) -> Result<Var> {
        let mut state = spectral::SpectralNormState {
            u: ps.get(self.u).clone(),
            iterations: if mode.training() { self.iterations } else { 0 },
            eps: 1e-12,
        };
        let w = ps.bind(g, self.linear.weight)?;
        let w_hat = spectral::spectral_normalize(g, w, &mut state)?;
        if mode.training() {
            updates.push(StateUpdate {
                id: self.u,
                value: state.u,
            });
        }
        let b = ps.bind(g, self.linear.bias)?;
        g.affine(x, w_hat, Some(b))
    }
}

/// Batch normalization over the feature axis of `[N, F]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, features: usize) -> Self {
        BatchNorm1d {
            gamma: ps.add(format!("{name}.gamma"), Tensor::ones(vec![features])),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(vec![features])),
            running_mean: ps.add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![features])),
            running_var: ps.add_buffer(format!("{name}.running_var"), Tensor::ones(vec![features])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes without the learnable gain and shift.
    pub fn normalize<T: Real>(
        &self,
        ps: &ParamSet<T>,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StateUpdate<T>>,
    ) -> Result<Var> {
        let eps = T::lit(self.eps);
        match mode {
            Mode::Train => {
                let n = g.shape(x).first().copied().unwrap_or(0);
                if n < 2 {
                    return Err(Error::InvalidArgument(
                        "batchnorm in training mode needs at least 2 rows".into(),
                    ));
                }
                let (y, mean, var) = g.batch_norm_train(x, eps)?;
                let m = T::lit(self.momentum);
                let unbias = T::lit(n as f64 / (n as f64 - 1.0));
                let blend = |old: &Tensor<T>, new: &[T], scale: T| {
                    old.data()
                        .iter()
                        .zip(new)
                        .map(|(&o, &v)| (T::one() - m) * o + m * v * scale)
                        .collect::<Vec<_>>()
                };
                let rm = blend(ps.get(self.running_mean), &mean, T::one());
                let rv = blend(ps.get(self.running_var), &var, unbias);
                let f = mean.len();
                updates.push(StateUpdate {
                    id: self.running_mean,
                    value: Tensor::new(vec![f], rm)?,
                });
                updates.push(StateUpdate {
                    id: self.running_var,
                    value: Tensor::new(vec![f], rv)?,
                });
                Ok(y)
            }
            Mode::Eval => {
                let neg_mean = ps.get(self.running_mean).map(|v| -v);
                let inv_std = ps
                    .get(self.running_var)
                    .map(|v| T::one() / (v + eps).sqrt());
                let nm = g.constant(neg_mean)?;
                let is = g.constant(inv_std)?;
                let centered = g.bias_add(x, nm, 1)?;
                g.channel_mul(centered, is, 1)
            }
        }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamSet<T>,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        updates: &mut Vec<StateUpdate<T>>,
    ) -> Result<Var> {
        let y = self.normalize(ps, g, x, mode, updates)?;
        let gamma = ps.bind(g, self.gamma)?;
        let beta = ps.bind(g, self.beta)?;
        let y = g.channel_mul(y, gamma, 1)?;
        g.bias_add(y, beta, 1)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn column_stats(data: &[f64], f: usize) -> (Vec<f64>, Vec<f64>) {
        let n = data.len() / f;
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for row in data.chunks(f) {
            for j in 0..f {
                mean[j] += row[j] / n as f64;
            }
        }
        for row in data.chunks(f) {
            for j in 0..f {
                var[j] += (row[j] - mean[j]).powi(2) / n as f64;
            }
        }
        (mean, var)
    }

    #[test]
    fn batchnorm_training_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::<f64>::new();
        let bn = BatchNorm1d::new(&mut ps, "bn", 4);
        let x: Tensor<f64> = uniform_init(&mut rng, vec![32, 4], 1).map(|v| 3.0 * v + 2.0);
        let mut g = Graph::new(0);
        let xv = g.constant(x).unwrap();
        let mut up = vec![];
        let y = bn.normalize(&ps, &mut g, xv, Mode::Train, &mut up).unwrap();
        let (mean, var) = column_stats(g.value(y).data(), 4);
        for j in 0..4 {
            assert!(mean[j].abs() < 1e-5);
            assert!((var[j] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batchnorm_constant_column_is_zero_not_nan() {
        let mut ps = ParamSet::<f32>::new();
        let bn = BatchNorm1d::new(&mut ps, "bn", 2);
        let mut g = Graph::new(0);
        let x = g
            .constant(Tensor::new(vec![3, 2], vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap())
            .unwrap();
        let mut up = vec![];
        let y = bn.forward(&ps, &mut g, x, Mode::Train, &mut up).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], 0.0);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn batchnorm_eval_with_full_momentum_matches_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::<f64>::new();
        let mut bn = BatchNorm1d::new(&mut ps, "bn", 3);
        bn.momentum = 1.0;
        let x: Tensor<f64> = uniform_init(&mut rng, vec![16, 3], 1);
        let mut g = Graph::new(0);
        let xv = g.constant(x).unwrap();
        let mut up = vec![];
        let train = bn.forward(&ps, &mut g, xv, Mode::Train, &mut up).unwrap();
        let train = g.value(train).clone();
        apply_updates(&mut ps, up);
        // Running variance is stored unbiased; undo that to compare with the
        // biased batch variance used in training mode.
        let n = 16.0;
        let rv = ps.get(bn.running_var).map(|v| v * (n - 1.0) / n);
        ps.set(bn.running_var, rv);
        let mut up = vec![];
        let eval = bn.forward(&ps, &mut g, xv, Mode::Eval, &mut up).unwrap();
        assert!(up.is_empty());
        for (a, b) in g.value(eval).data().iter().zip(train.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_rejects_single_row_in_training() {
        let mut ps = ParamSet::<f32>::new();
        let bn = BatchNorm1d::new(&mut ps, "bn", 2);
        let mut g = Graph::new(0);
        let x = g.constant(Tensor::zeros(vec![1, 2])).unwrap();
        let mut up = vec![];
        assert!(bn.forward(&ps, &mut g, x, Mode::Train, &mut up).is_err());
        assert!(bn.forward(&ps, &mut g, x, Mode::Eval, &mut up).is_ok());
    }
}
