//! Study recipes built from the training and evaluation primitives, and
//! the CSV files they emit.
//!
//! Every CSV starts with a `# config_hash=<hash>` line followed by a header
//! row. Wall-clock times go to separate `*.timing.csv` files so that the
//! metric logs of two identical runs are byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Metadata};
use crate::config::ExperimentConfig;
use crate::corpus::{
    corrupt, csv_err, partition_by_hours, read_corpus, synth_corpus, write_corpus, Corpus, CorpusManifest,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, seer, EvalReport, DEFAULT_MIN_RUN};
use crate::models::{AcousticModel, Generator};
use crate::train::{
    fine_tune, train_acoustic_model, train_gan, train_mtr_baseline, AmEpochLog, AmOutcome, GanNetworks, GanOutcome,
    GanTrainConfig, MtrOutcome,
};

/// The corpora of one seeded run.
#[derive(Clone, Debug)]
pub struct DeskData {
    pub manifest: CorpusManifest,
    pub clean_train: Corpus,
    pub noisy_train: Corpus,
    pub clean_dev: Corpus,
    pub noisy_dev: Corpus,
    pub clean_test: Corpus,
    pub noisy_test: Corpus,
}

const SPLITS: [&str; 6] = [
    "clean_train",
    "noisy_train",
    "clean_dev",
    "noisy_dev",
    "clean_test",
    "noisy_test",
];

impl DeskData {
    /// Synthesizes the corpus, cuts consecutive splits and corrupts the
    /// noisy ones.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let manifest = CorpusManifest::generate(&cfg.corpus)?;
        let all = synth_corpus(&manifest)?;
        let s = &cfg.splits;
        let mut at = 0;
        let mut take = |n: usize| {
            at += n;
            all.slice(at - n..at)
        };
        let clean_train = take(s.clean_train);
        let noisy_source = take(s.noisy_train);
        let clean_dev = take(s.dev);
        let clean_test = take(s.test);
        let seed = cfg.corpus.seed;
        let noisy = |c: &Corpus| c.map(|_, u| corrupt(u, &cfg.corruption, seed));
        Ok(DeskData {
            noisy_train: noisy(&noisy_source)?,
            noisy_dev: noisy(&clean_dev)?,
            noisy_test: noisy(&clean_test)?,
            manifest,
            clean_train,
            clean_dev,
            clean_test,
        })
    }

    fn splits(&self) -> [&Corpus; 6] {
        [
            &self.clean_train,
            &self.noisy_train,
            &self.clean_dev,
            &self.noisy_dev,
            &self.clean_test,
            &self.noisy_test,
        ]
    }

    /// Writes `manifest.toml` and one `<split>.ggcr` file per split.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.toml"), toml::to_string(&self.manifest)?)?;
        for (name, c) in SPLITS.iter().zip(self.splits()) {
            write_corpus(&dir.join(format!("{name}.ggcr")), c)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: CorpusManifest = toml::from_str(&fs::read_to_string(dir.join("manifest.toml"))?)?;
        let load = |name: &str| read_corpus(&dir.join(format!("{name}.ggcr")));
        Ok(DeskData {
            clean_train: load("clean_train")?,
            noisy_train: load("noisy_train")?,
            clean_dev: load("clean_dev")?,
            noisy_dev: load("noisy_dev")?,
            clean_test: load("clean_test")?,
            noisy_test: load("noisy_test")?,
            manifest,
        })
    }

    pub fn senone_to_token(&self) -> Vec<Option<usize>> {
        self.manifest.senone_to_token()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a CSV with the config-hash comment line and a header row.
pub fn write_csv<W: Write>(out: W, config_hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# config_hash={config_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, config_hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_csv(fs::File::create(path)?, config_hash, header, rows)
}

/// `<stem>.csv` with one row per epoch and `<stem>.timing.csv`.
pub fn write_am_log(dir: &Path, stem: &str, config_hash: &str, log: &[AmEpochLog]) -> Result<()> {
    let rows: Vec<_> = log
        .iter()
        .map(|l| vec![l.epoch.to_string(), opt(l.train_loss), l.dev_seer.to_string(), l.lr.to_string()])
        .collect();
    write_csv_file(
        &dir.join(format!("{stem}.csv")),
        config_hash,
        &["epoch", "train_loss", "dev_seer", "lr"],
        &rows,
    )?;
    let timing: Vec<_> = log
        .iter()
        .map(|l| vec![l.epoch.to_string(), format!("{:.3}", l.wall_clock_s)])
        .collect();
    write_csv_file(
        &dir.join(format!("{stem}.timing.csv")),
        config_hash,
        &["epoch", "wall_clock_s"],
        &timing,
    )
}

/// `<stem>.csv` (per epoch), `<stem>.steps.csv` and `<stem>.timing.csv`.
pub fn write_gan_log(dir: &Path, stem: &str, config_hash: &str, out: &GanOutcome) -> Result<()> {
    let rows: Vec<_> = out
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                opt(e.l_g),
                opt(e.l_d),
                opt(e.dev_seer),
                e.lr_g.to_string(),
                e.lr_d.to_string(),
            ]
        })
        .collect();
    write_csv_file(
        &dir.join(format!("{stem}.csv")),
        config_hash,
        &["epoch", "l_g", "l_d", "dev_seer", "lr_g", "lr_d"],
        &rows,
    )?;
    let steps: Vec<_> = out
        .steps
        .iter()
        .map(|s| vec![s.step.to_string(), s.epoch.to_string(), s.l_g.to_string(), s.l_d.to_string()])
        .collect();
    write_csv_file(
        &dir.join(format!("{stem}.steps.csv")),
        config_hash,
        &["step", "epoch", "l_g", "l_d"],
        &steps,
    )?;
    let timing: Vec<_> = out
        .epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), format!("{:.3}", e.wall_clock_s)])
        .collect();
    write_csv_file(
        &dir.join(format!("{stem}.timing.csv")),
        config_hash,
        &["epoch", "wall_clock_s"],
        &timing,
    )
}

pub fn write_report(dir: &Path, stem: &str, config_hash: &str, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.json")), report.to_json()?)?;
    let mut f = fs::File::create(dir.join(format!("{stem}.csv")))?;
    writeln!(f, "# config_hash={config_hash}")?;
    report.write_csv(f)
}

/// Last wall-clock entry of a log, i.e. the run's training time.
pub fn am_wall_clock(log: &[AmEpochLog]) -> f64 {
    log.last().map(|l| l.wall_clock_s).unwrap_or(0.0)
}

pub fn gan_wall_clock(out: &GanOutcome) -> f64 {
    out.epochs.last().map(|e| e.wall_clock_s).unwrap_or(0.0)
}

/// Clean-trained acoustic model, guided GAN and fine-tuning on one seed.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub am: AmOutcome,
    pub clean_dev_seer: f64,
    pub noisy_dev_seer: f64,
    pub gan: GanOutcome,
    pub finetune: AmOutcome,
}

impl Pipeline {
    pub fn gan_seer(&self) -> f64 {
        self.gan.best_seer
    }

    pub fn finetune_seer(&self) -> f64 {
        self.finetune.best_seer
    }
}

pub fn train_clean_am(cfg: &ExperimentConfig, data: &DeskData) -> Result<AmOutcome> {
    train_acoustic_model(&cfg.acoustic_model, &data.clean_train, &data.clean_dev, &cfg.am_train)
}

/// Guided GAN against `am` with freshly initialized networks.
pub fn run_gan(cfg: &ExperimentConfig, gan: &GanTrainConfig, data: &DeskData, am: &AcousticModel) -> Result<GanOutcome> {
    let nets = GanNetworks::build(&cfg.generator, &cfg.discriminator, gan.seed)?;
    train_gan(&data.clean_train, &data.noisy_train, &data.noisy_dev, am, nets, gan)
}

pub fn run_pipeline(cfg: &ExperimentConfig, data: &DeskData) -> Result<Pipeline> {
    let am = train_clean_am(cfg, data)?;
    let clean_dev_seer = seer(&am.model, None, &data.clean_dev)?;
    let noisy_dev_seer = seer(&am.model, None, &data.noisy_dev)?;
    let gan = run_gan(cfg, &cfg.gan, data, &am.model)?;
    let finetune = fine_tune(&am.model, &gan.generator, &data.noisy_train, &data.noisy_dev, &cfg.finetune)?;
    Ok(Pipeline {
        am,
        clean_dev_seer,
        noisy_dev_seer,
        gan,
        finetune,
    })
}

/// Checkpoints and logs of a pipeline run.
pub fn write_pipeline(dir: &Path, config_hash: &str, seed: u64, p: &Pipeline) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = |epoch: usize, dev_seer: f64| Metadata {
        seed,
        epoch,
        dev_seer: Some(dev_seer),
        config_hash: config_hash.to_string(),
    };
    Checkpoint::from_acoustic(&p.am.model, meta(p.am.best_epoch, p.am.best_seer)).save(&dir.join("am.ggan"))?;
    write_am_log(dir, "am", config_hash, &p.am.log)?;
    let gan_meta = meta(p.gan.best_epoch, p.gan.best_seer);
    Checkpoint::from_generator(&p.gan.generator, gan_meta.clone()).save(&dir.join("generator.ggan"))?;
    let last = p.gan.epochs.last().map(|e| e.epoch).unwrap_or(0);
    let d_meta = Metadata {
        epoch: last,
        dev_seer: None,
        ..gan_meta
    };
    Checkpoint::from_discriminator(&p.gan.discriminator, d_meta).save(&dir.join("discriminator.ggan"))?;
    write_gan_log(dir, "gan", config_hash, &p.gan)?;
    Checkpoint::from_acoustic(&p.finetune.model, meta(p.finetune.best_epoch, p.finetune.best_seer))
        .save(&dir.join("am_ft.ggan"))?;
    write_am_log(dir, "finetune", config_hash, &p.finetune.log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub hours: f64,
    pub utterances: usize,
    pub frames: usize,
    pub seer: f64,
    pub token_error_rate: f64,
}

/// One guided GAN per nested partition of the noisy training data, all from
/// the same initial networks and with the same number of updates, so only
/// the amount of data differs.
pub fn scaling_study(
    cfg: &ExperimentConfig,
    data: &DeskData,
    am: &AcousticModel,
) -> Result<Vec<(ScalingRow, GanOutcome)>> {
    let parts = partition_by_hours(&data.noisy_train, &cfg.hours, data.manifest.frames_per_hour, cfg.corpus.seed)?;
    let largest = parts.iter().map(|p| p.len()).max().unwrap_or(1);
    let s2t = data.senone_to_token();
    cfg.hours
        .iter()
        .zip(&parts)
        .map(|(&hours, idx)| {
            let noisy = data.noisy_train.subset(idx);
            let mut gan = cfg.gan.clone();
            gan.max_epochs = (cfg.gan.max_epochs * largest).div_ceil(idx.len());
            gan.patience = (cfg.gan.patience * largest).div_ceil(idx.len());
            let nets = GanNetworks::build(&cfg.generator, &cfg.discriminator, gan.seed)?;
            let out = train_gan(&data.clean_train, &noisy, &data.noisy_dev, am, nets, &gan)?;
            let r = evaluate(am, Some(&out.generator), &data.noisy_dev, &s2t, DEFAULT_MIN_RUN)?;
            let row = ScalingRow {
                hours,
                utterances: idx.len(),
                frames: noisy.total_frames(),
                seer: r.seer,
                token_error_rate: r.token_error_rate,
            };
            Ok((row, out))
        })
        .collect()
}

pub fn scaling_rows<'a>(rows: impl IntoIterator<Item = &'a ScalingRow>) -> Vec<Vec<String>> {
    rows.into_iter()
        .map(|r| {
            vec![
                r.hours.to_string(),
                r.utterances.to_string(),
                r.frames.to_string(),
                r.seer.to_string(),
                r.token_error_rate.to_string(),
            ]
        })
        .collect()
}

pub const SCALING_HEADER: [&str; 5] = ["hours", "utterances", "frames", "seer", "token_error_rate"];

/// SeER of a generator under the model that guided it and under another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossModelReport {
    pub guided_baseline: f64,
    pub guided_with_generator: f64,
    pub other_baseline: f64,
    pub other_with_generator: f64,
}

impl CrossModelReport {
    pub fn guided_delta(&self) -> f64 {
        self.guided_with_generator - self.guided_baseline
    }

    pub fn other_delta(&self) -> f64 {
        self.other_with_generator - self.other_baseline
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        vec![
            vec![
                "guided".into(),
                self.guided_baseline.to_string(),
                self.guided_with_generator.to_string(),
                self.guided_delta().to_string(),
            ],
            vec![
                "other".into(),
                self.other_baseline.to_string(),
                self.other_with_generator.to_string(),
                self.other_delta().to_string(),
            ],
        ]
    }
}

pub const CROSS_MODEL_HEADER: [&str; 4] = ["model", "baseline_seer", "with_generator_seer", "delta"];

pub fn cross_model(
    generator: &Generator,
    guided: &AcousticModel,
    other: &AcousticModel,
    dev: &Corpus,
) -> Result<CrossModelReport> {
    Ok(CrossModelReport {
        guided_baseline: seer(guided, None, dev)?,
        guided_with_generator: seer(guided, Some(generator), dev)?,
        other_baseline: seer(other, None, dev)?,
        other_with_generator: seer(other, Some(generator), dev)?,
    })
}

/// Multi-style baseline next to the guided pipeline.
#[derive(Clone, Debug)]
pub struct MtrComparison {
    /// Acoustic model trained on the noisy data alone.
    pub noisy_only: AmOutcome,
    pub mtr: MtrOutcome,
    pub noisy_only_seer: f64,
    pub mtr_seer: f64,
    pub gan_ft_seer: f64,
    pub mtr_wall_clock_s: f64,
    /// GAN training plus fine-tuning.
    pub gan_ft_wall_clock_s: f64,
}

impl MtrComparison {
    pub fn rows(&self) -> Vec<Vec<String>> {
        vec![
            vec![
                "noisy-only".into(),
                self.noisy_only.model.params.num_trainable().to_string(),
                self.noisy_only_seer.to_string(),
            ],
            vec![
                "mtr".into(),
                self.mtr.am.model.params.num_trainable().to_string(),
                self.mtr_seer.to_string(),
            ],
            vec!["gan+ft".into(), String::new(), self.gan_ft_seer.to_string()],
        ]
    }

    pub fn timing_rows(&self) -> Vec<Vec<String>> {
        vec![
            vec!["mtr".into(), format!("{:.3}", self.mtr_wall_clock_s)],
            vec!["gan+ft".into(), format!("{:.3}", self.gan_ft_wall_clock_s)],
        ]
    }
}

pub const MTR_HEADER: [&str; 3] = ["system", "parameters", "dev_seer"];

pub fn mtr_comparison(cfg: &ExperimentConfig, data: &DeskData, pipeline: &Pipeline) -> Result<MtrComparison> {
    let noisy_only = train_acoustic_model(&cfg.acoustic_model, &data.noisy_train, &data.noisy_dev, &cfg.am_train)?;
    let start = Instant::now();
    let mtr = train_mtr_baseline(
        &cfg.acoustic_model,
        &data.noisy_train,
        &cfg.perturb,
        &cfg.mtr_sets,
        &data.noisy_dev,
        &cfg.am_train,
    )?;
    let mtr_wall_clock_s = start.elapsed().as_secs_f64();
    Ok(MtrComparison {
        noisy_only_seer: noisy_only.best_seer,
        mtr_seer: mtr.am.best_seer,
        gan_ft_seer: pipeline.finetune_seer(),
        gan_ft_wall_clock_s: gan_wall_clock(&pipeline.gan) + am_wall_clock(&pipeline.finetune.log),
        mtr_wall_clock_s,
        noisy_only,
        mtr,
    })
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("median of nothing".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.corpus.n_utterances = 20;
        c.splits = crate::config::SplitSpec {
            clean_train: 8,
            noisy_train: 6,
            dev: 3,
            test: 3,
        };
        c
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let d = DeskData::build(&small()).unwrap();
        let mut ids = std::collections::HashSet::new();
        for c in [&d.clean_train, &d.noisy_train, &d.clean_dev, &d.clean_test] {
            for u in &c.utterances {
                assert!(ids.insert(u.id.clone()));
            }
        }
        assert_eq!(d.clean_train.len(), 8);
        assert_eq!(d.noisy_dev.len(), 3);
        for (a, b) in d.clean_dev.utterances.iter().zip(&d.noisy_dev.utterances) {
            assert_eq!((&a.id, &a.labels), (&b.id, &b.labels));
            assert_ne!(a.frames, b.frames);
        }
    }

    #[test]
    fn data_round_trips_through_files() {
        let d = DeskData::build(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let back = DeskData::read(dir.path()).unwrap();
        assert_eq!(back.manifest, d.manifest);
        assert_eq!(back.noisy_train, d.noisy_train);
        assert_eq!(back.clean_test, d.clean_test);
    }

    #[test]
    fn csv_has_hash_line_and_header() {
        let mut buf = Vec::new();
        write_csv(&mut buf, "abcd", &["a", "b"], &[vec!["1".into(), "2".into()]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# config_hash=abcd\na,b\n1,2\n");
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }
}
