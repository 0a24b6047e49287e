use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::GanTrainConfig;
use crate::error::{Error, Result};

/// Candidate values per axis. Phase one crosses batch size with both
/// learning rates at the base λ; phase two revisits the neighbourhood of the
/// phase-one winner (one step along each axis) crossed with every λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub batch_sizes: Vec<usize>,
    pub lrs_g: Vec<f64>,
    pub lrs_d: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() || self.lrs_g.is_empty() || self.lrs_d.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        Ok(())
    }

    /// The grid holding only the values of `cfg`.
    pub fn singleton(cfg: &GanTrainConfig) -> Self {
        GridSpec {
            batch_sizes: vec![cfg.batch_size],
            lrs_g: vec![cfg.lr_g],
            lrs_d: vec![cfg.lr_d],
            lambdas: vec![cfg.loss.lambda],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialKey {
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda: f64,
}

impl TrialKey {
    fn of(cfg: &GanTrainConfig) -> Self {
        TrialKey {
            batch_size: cfg.batch_size,
            lr_g: cfg.lr_g,
            lr_d: cfg.lr_d,
            lambda: cfg.loss.lambda,
        }
    }

    fn apply(&self, base: &GanTrainConfig) -> GanTrainConfig {
        let mut c = base.clone();
        c.batch_size = self.batch_size;
        c.lr_g = self.lr_g;
        c.lr_d = self.lr_d;
        c.loss.lambda = self.lambda;
        c
    }

    /// Lexicographic order over (batch size, lr_G, lr_D, λ).
    pub fn lex_cmp(&self, o: &TrialKey) -> Ordering {
        self.batch_size
            .cmp(&o.batch_size)
            .then(self.lr_g.total_cmp(&o.lr_g))
            .then(self.lr_d.total_cmp(&o.lr_d))
            .then(self.lambda.total_cmp(&o.lambda))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub phase: u8,
    pub key: TrialKey,
    /// Absent when the trial diverged.
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub best: GanTrainConfig,
    pub best_objective: f64,
    pub phase1_best: TrialKey,
    pub trials: Vec<Trial>,
}

impl GridOutcome {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        use crate::corpus::csv_err;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "batch_size", "lr_g", "lr_d", "lambda", "objective", "error"])
            .map_err(csv_err)?;
        for t in &self.trials {
            w.write_record([
                t.phase.to_string(),
                t.key.batch_size.to_string(),
                t.key.lr_g.to_string(),
                t.key.lr_d.to_string(),
                t.key.lambda.to_string(),
                t.objective.map(|v| v.to_string()).unwrap_or_default(),
                t.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sorted<T: Copy>(v: &[T], cmp: impl Fn(&T, &T) -> Ordering) -> Vec<T> {
    let mut s = v.to_vec();
    s.sort_by(&cmp);
    s.dedup_by(|a, b| cmp(a, b) == Ordering::Equal);
    s
}

/// The value itself and its immediate neighbours in the sorted axis.
fn around<T: Copy + PartialEq>(axis: &[T], center: T) -> Vec<T> {
    let i = axis.iter().position(|&v| v == center).unwrap_or(0);
    axis[i.saturating_sub(1)..(i + 2).min(axis.len())].to_vec()
}

fn argmin(trials: &[Trial]) -> Option<(&Trial, f64)> {
    trials
        .iter()
        .filter_map(|t| t.objective.map(|o| (t, o)))
        .min_by(|(a, x), (b, y)| x.total_cmp(y).then(a.key.lex_cmp(&b.key)))
}

/// Two-phase search minimizing `objective`. Trials failing with
/// [`Error::Divergence`] are recorded and skipped; other errors abort.
pub fn grid_search<F>(base: &GanTrainConfig, grid: &GridSpec, mut objective: F) -> Result<GridOutcome>
where
    F: FnMut(&GanTrainConfig) -> Result<f64>,
{
    grid.validate()?;
    let batches = sorted(&grid.batch_sizes, |a, b| a.cmp(b));
    let lrs_g = sorted(&grid.lrs_g, |a, b| a.total_cmp(b));
    let lrs_d = sorted(&grid.lrs_d, |a, b| a.total_cmp(b));
    let lambdas = sorted(&grid.lambdas, |a, b| a.total_cmp(b));
    let mut trials: Vec<Trial> = Vec::new();

    let mut run = |phase: u8, key: TrialKey, trials: &mut Vec<Trial>| -> Result<()> {
        if trials.iter().any(|t| t.key.lex_cmp(&key) == Ordering::Equal) {
            return Ok(());
        }
        let (objective, error) = match objective(&key.apply(base)) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("objective {v}"))),
            Err(Error::Divergence(m)) => (None, Some(m)),
            Err(e) => return Err(e),
        };
        trials.push(Trial {
            phase,
            key,
            objective,
            error,
        });
        Ok(())
    };

    for &batch_size in &batches {
        for &lr_g in &lrs_g {
            for &lr_d in &lrs_d {
                let key = TrialKey {
                    batch_size,
                    lr_g,
                    lr_d,
                    lambda: base.loss.lambda,
                };
                run(1, key, &mut trials)?;
            }
        }
    }
    let Some((winner, _)) = argmin(&trials) else {
        return Err(all_diverged(&trials));
    };
    let center = winner.key;

    for &batch_size in &around(&batches, center.batch_size) {
        for &lr_g in &around(&lrs_g, center.lr_g) {
            for &lr_d in &around(&lrs_d, center.lr_d) {
                for &lambda in &lambdas {
                    let key = TrialKey {
                        batch_size,
                        lr_g,
                        lr_d,
                        lambda,
                    };
                    run(2, key, &mut trials)?;
                }
            }
        }
    }
    let (best, best_objective) = argmin(&trials).ok_or_else(|| all_diverged(&trials))?;
    let best = if TrialKey::of(base).lex_cmp(&best.key) == Ordering::Equal {
        base.clone()
    } else {
        best.key.apply(base)
    };
    Ok(GridOutcome {
        best,
        best_objective,
        phase1_best: center,
        trials,
    })
}

fn all_diverged(trials: &[Trial]) -> Error {
    let list: Vec<String> = trials
        .iter()
        .map(|t| {
            format!(
                "(b={}, lr_g={}, lr_d={}, λ={}): {}",
                t.key.batch_size,
                t.key.lr_g,
                t.key.lr_d,
                t.key.lambda,
                t.error.as_deref().unwrap_or("?")
            )
        })
        .collect();
    Error::Divergence(format!("every grid trial diverged: {}", list.join("; ")))
}
