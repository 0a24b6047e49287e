use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Buffers (running statistics, power-iteration vectors) are stored and
    /// checkpointed alongside weights but never receive gradients.
    pub trainable: bool,
}

/// Named tensors owned by one network.
///
/// Binding a set into a [`Graph`] is idempotent per graph: the same parameter
/// used by several forward passes maps to a single leaf, so its gradient is
/// the sum over all uses.
#[derive(Debug)]
pub struct ParamSet<T: Real = f32> {
    uid: u64,
    params: Vec<Param<T>>,
    frozen: bool,
}

impl<T: Real> Clone for ParamSet<T> {
    fn clone(&self) -> Self {
        ParamSet {
            uid: fresh_uid(),
            params: self.params.clone(),
            frozen: self.frozen,
        }
    }
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            uid: fresh_uid(),
            params: Vec::new(),
            frozen: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor<T>, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Param {
            name,
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        debug_assert_eq!(value.shape(), self.params[id.0].value.shape());
        self.params[id.0].value = value;
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen sets bind as constants: no gradient reaches them.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn bind(&self, g: &mut Graph<T>, id: ParamId) -> Result<Var> {
        let key = (self.uid, id.0);
        if let Some(v) = g.binding(key) {
            return Ok(v);
        }
        let p = &self.params[id.0];
        let v = g.leaf(p.value.clone(), p.trainable && !self.frozen)?;
        g.set_binding(key, v);
        Ok(v)
    }

    /// Adds the gradients of every bound parameter into `grad`. Calling this
    /// twice without [`ParamSet::zero_grad`] accumulates.
    pub fn accumulate(&mut self, g: &Graph<T>, grads: &Gradients<T>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            let Some(v) = g.binding((self.uid, i)) else {
                continue;
            };
            if let Some(d) = grads.get(v) {
                for (acc, &x) in p.grad.data_mut().iter_mut().zip(d.data()) {
                    *acc += x;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            for v in p.grad.data_mut() {
                *v = T::zero();
            }
        }
    }

    /// Digest of every name, shape and value (buffers included).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            uid: fresh_uid(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            frozen: self.frozen,
        }
    }

    /// Replaces values from `(name, tensor)` pairs, requiring an exact match
    /// of names and shapes.
    pub fn load(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(tensors) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_binding_shares_one_leaf_and_accumulates() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new(0);
        let a = ps.bind(&mut g, id).unwrap();
        let b = ps.bind(&mut g, id).unwrap();
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        ps.accumulate(&g, &grads);
        assert_eq!(ps.iter().next().unwrap().grad.data(), &[2.0, 4.0]);
        ps.accumulate(&g, &grads);
        assert_eq!(ps.iter().next().unwrap().grad.data(), &[4.0, 8.0]);
        ps.zero_grad();
        assert_eq!(ps.iter().next().unwrap().grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_sets_receive_no_gradient() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("w", Tensor::ones(vec![3]));
        ps.set_frozen(true);
        let mut g = Graph::new(0);
        let w = ps.bind(&mut g, id).unwrap();
        assert!(!g.requires_grad(w));
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("w", Tensor::ones(vec![3]));
        let before = ps.fingerprint();
        assert_eq!(before, ps.clone().fingerprint());
        ps.set(id, Tensor::zeros(vec![3]));
        assert_ne!(before, ps.fingerprint());
    }
}
