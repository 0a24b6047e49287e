//! Finite-difference checks of parameter gradients for whole networks.

use super::param::{ParamId, ParamSet};
use crate::autodiff::gradcheck::{Mismatch, Report, Tolerance};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Real;

/// Anything that owns a [`ParamSet`].
pub trait Module<T: Real> {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
}

#[derive(Clone, Debug, Default)]
pub struct ParamCheck {
    /// Checks at most this many evenly spaced entries per tensor.
    pub max_per_tensor: Option<usize>,
    pub skip: Vec<ParamId>,
}

/// Compares backpropagated parameter gradients of the scalar `f(net)` with
/// central differences. Buffers are never perturbed. `f` runs on a graph
/// seeded with `seed` every time.
pub fn check_params<N, F>(
    net: &mut N,
    seed: u64,
    tol: Tolerance,
    opts: &ParamCheck,
    f: F,
) -> Result<Report>
where
    N: Module<f64>,
    F: Fn(&N, &mut Graph<f64>) -> Result<Var>,
{
    let eval = |net: &N| -> Result<f64> {
        let mut g = Graph::new(seed);
        let out = f(net, &mut g)?;
        Ok(g.value(out).item())
    };

    net.params_mut().zero_grad();
    let mut g = Graph::new(seed);
    let out = f(net, &mut g)?;
    let grads = g.backward(out)?;
    net.params_mut().accumulate(&g, &grads);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.data().to_vec()).collect();
    net.params_mut().zero_grad();

    let mut report = Report::default();
    for (which, a) in analytic.iter().enumerate() {
        let p = net.params().iter().nth(which).expect("param index");
        if !p.trainable || opts.skip.contains(&ParamId(which)) {
            continue;
        }
        let n = a.len();
        let picks: Vec<usize> = match opts.max_per_tensor {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        let id = ParamId(which);
        for idx in picks {
            let orig = net.params().get(id).data()[idx];
            let bump = |net: &mut N, v: f64| {
                let mut t = net.params().get(id).clone();
                t.data_mut()[idx] = v;
                net.params_mut().set(id, t);
            };
            bump(net, orig + tol.step);
            let plus = eval(net)?;
            bump(net, orig - tol.step);
            let minus = eval(net)?;
            bump(net, orig);
            let numeric = (plus - minus) / (2.0 * tol.step);
            let err = (a[idx] - numeric).abs();
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if err > tol.atol + tol.rtol * numeric.abs() {
                report.mismatches.push(Mismatch {
                    input: which,
                    index: idx,
                    analytic: a[idx],
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
