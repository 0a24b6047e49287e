//! `ggan`: corpus generation, training, evaluation and the study recipes.
//!
//! Every command reads an experiment config (the built-in desk task when
//! `--config` is absent), echoes the resolved config and runs once per seed
//! under `<output_dir>/seed-<seed>/`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ggan::losses::LossFamily;

#[derive(Parser, Debug)]
#[command(name = "ggan", version, about = "Classifier-guided GAN feature enhancement experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Experiment config file (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `seeds` with a single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    CleanDev,
    NoisyDev,
    CleanTest,
    NoisyTest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PairedSplit {
    Dev,
    Test,
}

#[derive(Args, Debug)]
pub struct GanArgs {
    /// Guidance weight λ (`gan.loss.lambda`).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Adversarial loss family (`gan.loss.family`): sn-gan, ns-gan or wgan-gp.
    #[arg(long)]
    pub loss: Option<LossFamily>,
    /// Keeps a generator checkpoint per evaluation (`gan.keep_snapshots`).
    #[arg(long)]
    pub snapshots: bool,
    /// Continues from `gan/generator.last.ggan` and `gan/discriminator.ggan`.
    #[arg(long)]
    pub resume: bool,
    /// Guiding acoustic model [default: <seed dir>/am/am.ggan].
    #[arg(long)]
    pub am: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize the corpus, its corrupted splits and the hour partitions.
    GenData,
    /// Train the acoustic model on clean data (or noisy data with --noisy).
    TrainAm {
        #[arg(long)]
        noisy: bool,
    },
    /// Train the generator guided by a frozen acoustic model.
    TrainGan(GanArgs),
    /// Fine-tune the acoustic model on generator-enhanced noisy data.
    Finetune {
        #[arg(long)]
        am: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Train the multi-style baseline next to a noisy-only model.
    TrainMtr,
    /// Two-phase hyperparameter search of the GAN.
    Grid {
        #[arg(long)]
        am: Option<PathBuf>,
    },
    /// Score an acoustic model, optionally behind a generator.
    Evaluate {
        #[arg(long)]
        am: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "noisy-dev")]
        split: Split,
        /// Also dump feature triplets of these utterance ids.
        #[arg(long, value_delimiter = ',')]
        export_features: Vec<String>,
    },
    /// One GAN per nested partition of the noisy training data.
    ScalingStudy {
        /// Overrides `hours`.
        #[arg(long, value_delimiter = ',')]
        hours: Vec<f64>,
        #[arg(long)]
        am: Option<PathBuf>,
    },
    /// Correlate SeER and token error rate over generator checkpoints.
    Correlate {
        /// Directory of generator checkpoints [default: <seed dir>/gan/snapshots].
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        am: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "noisy-dev")]
        split: Split,
    },
    /// Score a generator under the model that guided it and under another.
    CrossModel {
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        am: Option<PathBuf>,
        #[arg(long)]
        other_am: PathBuf,
    },
    /// Write clean, corrupted and generated frames of utterances as CSV.
    ExportFeatures {
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dev")]
        split: PairedSplit,
        /// Utterance ids [default: the first utterance of the split].
        #[arg(long, value_delimiter = ',')]
        utt: Vec<String>,
    },
}

fn threads() -> Result<Option<usize>, String> {
    match std::env::var("GGAN_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("GGAN_THREADS must be a non-negative integer, got `{v}`")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match threads() {
        Err(m) => {
            eprintln!("error: {m}");
            return ExitCode::from(2);
        }
        Ok(Some(0)) => ggan::parallel::sequential(|| commands::run(&cli.common, &cli.command)),
        Ok(Some(n)) => {
            ggan::parallel::init_threads(n);
            commands::run(&cli.common, &cli.command)
        }
        Ok(None) => commands::run(&cli.common, &cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
