//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used to build the reference, so the check is
//! independent of every backward rule it verifies.

use super::graph::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-3,
            rtol: 1e-3,
            atol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
    pub max_abs_err: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares the analytic gradient of a scalar function of `inputs` with
/// central differences. `f` rebuilds the computation on a fresh graph seeded
/// with `seed` each time, so stochastic layers see identical masks.
pub fn check<F>(inputs: &[Tensor<f64>], seed: u64, tol: Tolerance, f: F) -> Result<Report>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(seed);
        let vars = vals
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(seed);
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = Report::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[which].shape().to_vec()));
        for idx in 0..inputs[which].numel() {
            let orig = inputs[which].data()[idx];
            work[which].data_mut()[idx] = orig + tol.step;
            let plus = eval(&work)?;
            work[which].data_mut()[idx] = orig - tol.step;
            let minus = eval(&work)?;
            work[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * tol.step);
            let a = analytic.data()[idx];
            let err = (a - numeric).abs();
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if err > tol.atol + tol.rtol * numeric.abs() {
                report.mismatches.push(Mismatch {
                    input: which,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
