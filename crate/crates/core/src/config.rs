//! The experiment configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusParams, CorruptionSpec, PerturbKind, PerturbSpec};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossFamily};
use crate::models::{AcousticModelSpec, DiscriminatorSpec, GeneratorSpec};
use crate::train::{AmTrainConfig, GanTrainConfig, GridSpec};

/// Utterance counts of each split, taken in this order from one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Clean data: trains the acoustic model and is the discriminator's
    /// real side.
    pub clean_train: usize,
    /// Different utterances, corrupted; the generator's input.
    pub noisy_train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.clean_train + self.noisy_train + self.dev + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Hour-equivalents of noisy training data for the scaling study.
    pub hours: Vec<f64>,
    /// Perturbed copies added by the multi-style baseline.
    pub mtr_sets: Vec<PerturbKind>,
    /// Epochs per grid-search trial.
    pub grid_epochs: usize,
    pub corpus: CorpusParams,
    pub splits: SplitSpec,
    pub corruption: CorruptionSpec,
    pub perturb: PerturbSpec,
    pub acoustic_model: AcousticModelSpec,
    pub am_train: AmTrainConfig,
    pub finetune: AmTrainConfig,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub gan: GanTrainConfig,
    pub grid: GridSpec,
}

impl Default for ExperimentConfig {
    /// The desk-scale task used by the acceptance suite.
    fn default() -> Self {
        let corpus = CorpusParams {
            n_utterances: 520,
            ..CorpusParams::default()
        };
        let f = corpus.features;
        let gan = GanTrainConfig {
            loss: LossConfig::new(LossFamily::SnGan, 1.0),
            max_epochs: 30,
            patience: 8,
            ..GanTrainConfig::default()
        };
        ExperimentConfig {
            output_dir: PathBuf::from("runs"),
            seeds: vec![0, 1, 2],
            hours: vec![0.005, 0.01, 0.02, 0.04],
            mtr_sets: vec![PerturbKind::Speed, PerturbKind::Volume],
            grid_epochs: 3,
            splits: SplitSpec {
                clean_train: 200,
                noisy_train: 200,
                dev: 60,
                test: 60,
            },
            corruption: CorruptionSpec::default(),
            perturb: PerturbSpec::default(),
            acoustic_model: AcousticModelSpec::new(f, 64, corpus.senones),
            am_train: AmTrainConfig::default(),
            finetune: AmTrainConfig::default(),
            generator: GeneratorSpec::default_fc(f),
            discriminator: DiscriminatorSpec::compact(f, gan.window, [16; 4]),
            grid: GridSpec {
                batch_sizes: vec![8, 16, 32],
                lrs_g: vec![3e-4, 1e-3],
                lrs_d: vec![3e-4, 1e-3],
                lambdas: vec![0.5, 1.0, 2.0],
            },
            gan,
            corpus,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.corruption.validate()?;
        self.acoustic_model.validate()?;
        self.am_train.validate()?;
        self.finetune.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.gan.validate()?;
        self.grid.validate()?;
        let f = self.corpus.features;
        if self.acoustic_model.features != f || self.generator.features != f || self.discriminator.features != f {
            return Err(Error::Config(format!("every network must use the corpus' F = {f}")));
        }
        if self.acoustic_model.senones != self.corpus.senones {
            return Err(Error::Config("acoustic model C differs from the corpus".into()));
        }
        if self.discriminator.window != self.gan.window {
            return Err(Error::Config("discriminator window differs from the GAN chunk window".into()));
        }
        if self.splits.total() > self.corpus.n_utterances {
            return Err(Error::Config(format!(
                "splits need {} utterances, the corpus has {}",
                self.splits.total(),
                self.corpus.n_utterances
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(hex::encode(digest)[..16].to_string())
    }

    /// Copy with every random stream derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.corpus.seed = seed;
        c.am_train.seed = seed;
        c.finetune.seed = seed;
        c.gan.seed = seed;
        c.seeds = vec![seed];
        c
    }
}
