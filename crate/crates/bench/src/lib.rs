//! Fixtures shared by the benches.

use ggan::config::{ExperimentConfig, SplitSpec};
use ggan::experiments::DeskData;
use ggan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// The desk config cut down to a few dozen utterances.
pub fn small_task() -> (ExperimentConfig, DeskData) {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.n_utterances = 60;
    cfg.splits = SplitSpec {
        clean_train: 20,
        noisy_train: 20,
        dev: 10,
        test: 10,
    };
    cfg.am_train.max_epochs = 1;
    let data = DeskData::build(&cfg).expect("desk config is valid");
    (cfg, data)
}
