//! Acoustic-model training, the guided adversarial loop, fine-tuning,
//! multi-style baselines and grid search.

mod am;
mod gan;
mod grid;

pub use am::{
    fine_tune, fit_acoustic_model, train_acoustic_model, train_mtr_baseline, AmEpochLog, AmOutcome,
    AmTrainConfig, MtrOutcome,
};
pub use gan::{
    train_gan, GanEpochLog, GanNetworks, GanOutcome, GanStepLog, GanTrainConfig, Snapshot,
};
pub use grid::{grid_search, GridOutcome, GridSpec, Trial, TrialKey};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Derives an independent generator for a named purpose within a run.
pub(crate) fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose);
    r
}

/// Fresh per-graph seed; dropout masks depend on nothing else.
pub(crate) fn graph_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.gen()
}

pub(crate) fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence(format!("{what} became {value}")))
    }
}
