use serde::{Deserialize, Serialize};

use super::param::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Real;

fn check_finite<T: Real>(ps: &ParamSet<T>) -> Result<()> {
    for p in ps.iter().filter(|p| p.trainable) {
        if !p.grad.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient for `{}`",
                p.name
            )));
        }
    }
    Ok(())
}

/// `p ← p − lr·g` over every trainable parameter.
pub fn sgd_step<T: Real>(ps: &mut ParamSet<T>, lr: f64) -> Result<()> {
    check_finite(ps)?;
    let lr = T::lit(lr);
    for p in ps.iter_mut().filter(|p| p.trainable) {
        let grad = p.grad.data();
        for (w, &g) in p.value.data_mut().iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(ps: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || ps.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update. Non-finite gradients abort the step
    /// before anything is modified.
    pub fn step(&mut self, ps: &mut ParamSet<T>, lr: f64) -> Result<()> {
        check_finite(ps)?;
        if self.m.len() != ps.len() {
            return Err(Error::Internal("Adam state does not match parameters".into()));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let step = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(eps);
        for ((p, m), v) in ps.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.data();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                w[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
