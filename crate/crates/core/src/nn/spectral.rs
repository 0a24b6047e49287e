//! Spectral normalization by power iteration.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Persistent left singular-vector estimate for one weight.
#[derive(Clone, Debug)]
pub struct SpectralNormState<T: Real> {
    /// Unit vector with one entry per weight row.
    pub u: Tensor<T>,
    pub iterations: usize,
    pub eps: f64,
}

impl<T: Real> SpectralNormState<T> {
    pub fn new(rng: &mut ChaCha8Rng, rows: usize) -> Self {
        SpectralNormState {
            u: random_unit(rng, rows),
            iterations: 1,
            eps: 1e-12,
        }
    }
}

pub fn random_unit<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> Tensor<T> {
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    Tensor::from_f64(vec![n], &v).expect("non-empty")
}

fn normalize<T: Real>(v: &mut [T], eps: T) -> T {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n > eps {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Runs `state.iterations` rounds of `v = Wᵀu/‖Wᵀu‖, u = Wv/‖Wv‖` on a
/// `rows × cols` matrix and returns `σ̂ = uᵀWv`. With zero iterations the
/// stored `u` is used as is.
pub fn power_iteration<T: Real>(
    w: &[T],
    rows: usize,
    cols: usize,
    state: &mut SpectralNormState<T>,
) -> T {
    let eps = T::lit(state.eps);
    let u = state.u.data_mut();
    let mut v = vec![T::zero(); cols];
    let wt_u = |u: &[T], v: &mut [T]| {
        v.iter_mut().for_each(|x| *x = T::zero());
        for i in 0..rows {
            let ui = u[i];
            for (vj, &wij) in v.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                *vj += wij * ui;
            }
        }
    };
    let w_v = |v: &[T], out: &mut [T]| {
        for i in 0..rows {
            out[i] = w[i * cols..(i + 1) * cols]
                .iter()
                .zip(v)
                .map(|(&a, &b)| a * b)
                .sum();
        }
    };
    let mut wv = vec![T::zero(); rows];
    for _ in 0..state.iterations {
        wt_u(u, &mut v);
        normalize(&mut v, eps);
        w_v(&v, &mut wv);
        // A zero matrix leaves u where it was so it stays a unit vector.
        if normalize(&mut wv, eps) > eps {
            u.copy_from_slice(&wv);
        }
    }
    wt_u(u, &mut v);
    normalize(&mut v, eps);
    w_v(&v, &mut wv);
    u.iter().zip(&wv).map(|(&a, &b)| a * b).sum()
}

/// Returns `W / σ̂` as a graph node. `σ̂` is computed from the current weight
/// values and treated as a constant in the backward pass. Weights of rank
/// above two are viewed as `shape[0] × (rest)`.
pub fn spectral_normalize<T: Real>(
    g: &mut Graph<T>,
    w: Var,
    state: &mut SpectralNormState<T>,
) -> Result<Var> {
    let shape = g.shape(w).to_vec();
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "spectral_normalize expects a matrix, got {shape:?}"
        )));
    }
    let rows = shape[0];
    let cols = g.value(w).numel() / rows;
    if state.u.numel() != rows {
        return Err(Error::Shape(format!(
            "power-iteration vector has {} entries for {rows} rows",
            state.u.numel()
        )));
    }
    let sigma = power_iteration(g.value(w).data(), rows, cols, state);
    let sigma = sigma.max(T::lit(state.eps));
    g.scale(w, T::one() / sigma)
}
