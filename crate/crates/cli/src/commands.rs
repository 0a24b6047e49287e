use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ggan::checkpoint::{Checkpoint, Metadata};
use ggan::config::ExperimentConfig;
use ggan::corpus::{partition_by_hours, Corpus};
use ggan::experiments::*;
use ggan::losses::LossConfig;
use ggan::metrics::{correlation_study, evaluate, front_end, seer, DEFAULT_MIN_RUN};
use ggan::models::{AcousticModel, Generator};
use ggan::train::{
    fine_tune, grid_search, train_acoustic_model, train_gan, train_mtr_baseline, GanNetworks, GanOutcome,
};
use ggan::{Error, Result};

use crate::{Command, Common, GanArgs, PairedSplit, Split};

pub fn run(common: &Common, command: &Command) -> Result<()> {
    let cfg = resolve(common, command)?;
    println!("# resolved config, hash {}", cfg.hash()?);
    print!("{}", cfg.to_toml()?);
    fs::create_dir_all(&cfg.output_dir)?;
    cfg.save(&cfg.output_dir.join("config.toml"))?;
    for &seed in &cfg.seeds {
        let ctx = Ctx::new(&cfg, seed)?;
        eprintln!("seed {seed}: {}", ctx.dir.display());
        dispatch(&ctx, command)?;
    }
    Ok(())
}

/// Loads the config and applies the flags that have config counterparts.
fn resolve(common: &Common, command: &Command) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    match command {
        Command::TrainGan(GanArgs {
            lambda, loss, snapshots, ..
        }) => {
            let lambda = lambda.unwrap_or(cfg.gan.loss.lambda);
            if let Some(family) = loss {
                cfg.gan.loss = LossConfig::new(*family, lambda);
            }
            cfg.gan.loss.lambda = lambda;
            cfg.gan.keep_snapshots |= snapshots;
        }
        Command::ScalingStudy { hours, .. } if !hours.is_empty() => cfg.hours = hours.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: ExperimentConfig,
    hash: String,
    dir: PathBuf,
    seed: u64,
}

fn missing(path: &Path, hint: &str) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("{} not found; {hint}", path.display()),
    ))
}

impl Ctx {
    fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let dir = cfg.output_dir.join(format!("seed-{seed}"));
        let cfg = cfg.with_seed(seed);
        Ok(Ctx {
            hash: cfg.hash()?,
            cfg,
            dir,
            seed,
        })
    }

    fn sub(&self, name: &str) -> Result<PathBuf> {
        let d = self.dir.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn data(&self) -> Result<DeskData> {
        let d = self.dir.join("data");
        if !d.join("manifest.toml").exists() {
            return Err(missing(&d, "run `ggan gen-data` first"));
        }
        DeskData::read(&d)
    }

    fn meta(&self, epoch: usize, dev_seer: Option<f64>) -> Metadata {
        Metadata {
            seed: self.seed,
            epoch,
            dev_seer,
            config_hash: self.hash.clone(),
        }
    }

    fn checkpoint(&self, given: &Option<PathBuf>, default: &str, hint: &str) -> Result<Checkpoint> {
        let path = given.clone().unwrap_or_else(|| self.dir.join(default));
        if !path.exists() {
            return Err(missing(&path, hint));
        }
        Checkpoint::load(&path)
    }

    fn am(&self, given: &Option<PathBuf>) -> Result<AcousticModel> {
        self.checkpoint(given, "am/am.ggan", "run `ggan train-am` first")?
            .to_acoustic()
    }

    fn generator(&self, given: &Option<PathBuf>) -> Result<Generator> {
        self.checkpoint(given, "gan/generator.ggan", "run `ggan train-gan` first")?
            .to_generator()
    }

    fn csv(&self, path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        write_csv_file(path, &self.hash, header, rows)
    }
}

fn split_of(data: &DeskData, split: Split) -> &Corpus {
    match split {
        Split::CleanDev => &data.clean_dev,
        Split::NoisyDev => &data.noisy_dev,
        Split::CleanTest => &data.clean_test,
        Split::NoisyTest => &data.noisy_test,
    }
}

fn dispatch(ctx: &Ctx, command: &Command) -> Result<()> {
    match command {
        Command::GenData => gen_data(ctx),
        Command::TrainAm { noisy } => train_am(ctx, *noisy),
        Command::TrainGan(args) => train_gan_cmd(ctx, args),
        Command::Finetune { am, generator } => finetune(ctx, am, generator),
        Command::TrainMtr => train_mtr(ctx),
        Command::Grid { am } => grid(ctx, am),
        Command::Evaluate {
            am,
            generator,
            split,
            export_features,
        } => evaluate_cmd(ctx, am, generator, *split, export_features),
        Command::ScalingStudy { am, .. } => scaling(ctx, am),
        Command::Correlate { checkpoints, am, split } => correlate(ctx, checkpoints, am, *split),
        Command::CrossModel {
            generator,
            am,
            other_am,
        } => cross(ctx, generator, am, other_am),
        Command::ExportFeatures { generator, split, utt } => {
            let g = ctx.generator(generator)?;
            export_features(ctx, &g, *split, utt, &ctx.sub("features")?)
        }
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let data = DeskData::build(&ctx.cfg)?;
    let dir = ctx.sub("data")?;
    data.write(&dir)?;
    let parts = partition_by_hours(
        &data.noisy_train,
        &ctx.cfg.hours,
        data.manifest.frames_per_hour,
        ctx.cfg.corpus.seed,
    )?;
    let rows: Vec<Vec<String>> = ctx
        .cfg
        .hours
        .iter()
        .zip(&parts)
        .map(|(h, idx)| {
            let sub = data.noisy_train.subset(idx);
            let ids: Vec<&str> = sub.utterances.iter().map(|u| u.id.as_str()).collect();
            vec![h.to_string(), idx.len().to_string(), sub.total_frames().to_string(), ids.join(" ")]
        })
        .collect();
    ctx.csv(&dir.join("partitions.csv"), &["hours", "utterances", "frames", "ids"], &rows)?;
    eprintln!(
        "wrote {} clean-train, {} noisy-train, {} dev and {} test utterances",
        data.clean_train.len(),
        data.noisy_train.len(),
        data.clean_dev.len(),
        data.clean_test.len()
    );
    Ok(())
}

fn train_am(ctx: &Ctx, noisy: bool) -> Result<()> {
    let data = ctx.data()?;
    let (train, dev, name) = if noisy {
        (&data.noisy_train, &data.noisy_dev, "am-noisy")
    } else {
        (&data.clean_train, &data.clean_dev, "am")
    };
    let out = train_acoustic_model(&ctx.cfg.acoustic_model, train, dev, &ctx.cfg.am_train)?;
    let dir = ctx.sub(name)?;
    Checkpoint::from_acoustic(&out.model, ctx.meta(out.best_epoch, Some(out.best_seer)))
        .save(&dir.join(format!("{name}.ggan")))?;
    write_am_log(&dir, name, &ctx.hash, &out.log)?;
    eprintln!("dev SeER {:.4} at epoch {}", out.best_seer, out.best_epoch);
    Ok(())
}

/// Rows of a log CSV as (epoch, line), skipping the comment and header.
fn log_rows(text: &str, epoch_col: usize) -> Result<Vec<(usize, String)>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let epoch = l
                .split(',')
                .nth(epoch_col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad log row `{l}`")))?;
            Ok((epoch, l.to_string()))
        })
        .collect()
}

/// Keeps the old rows up to `start` and the new rows after it.
fn merge_log(path: &Path, old: &str, start: usize, epoch_col: usize) -> Result<()> {
    let new = fs::read_to_string(path)?;
    let mut lines: Vec<&str> = new.lines().take_while(|l| l.starts_with('#')).collect();
    let header = new.lines().find(|l| !l.starts_with('#')).unwrap_or_default();
    lines.push(header);
    let kept_old = log_rows(old, epoch_col)?;
    let kept_new = log_rows(&new, epoch_col)?;
    let mut out = lines.join("\n");
    for (_, l) in kept_old.iter().filter(|(e, _)| *e <= start) {
        out.push('\n');
        out.push_str(l);
    }
    for (_, l) in kept_new.iter().filter(|(e, _)| *e > start) {
        out.push('\n');
        out.push_str(l);
    }
    out.push('\n');
    fs::write(path, out)?;
    Ok(())
}

const GAN_LOGS: [(&str, usize); 3] = [("gan.csv", 0), ("gan.steps.csv", 1), ("gan.timing.csv", 0)];

fn train_gan_cmd(ctx: &Ctx, args: &GanArgs) -> Result<()> {
    let data = ctx.data()?;
    let am = ctx.am(&args.am)?;
    let dir = ctx.sub("gan")?;
    let (nets, previous) = if args.resume {
        let g = ctx.checkpoint(&Some(dir.join("generator.last.ggan")), "", "nothing to resume")?;
        let d = ctx.checkpoint(&Some(dir.join("discriminator.ggan")), "", "nothing to resume")?;
        let best = Checkpoint::load(&dir.join("generator.ggan"))?;
        let mut old_logs = Vec::new();
        for (name, _) in GAN_LOGS {
            old_logs.push(fs::read_to_string(dir.join(name))?);
        }
        let nets = GanNetworks {
            generator: g.to_generator()?,
            discriminator: d.to_discriminator()?,
            start_epoch: d.meta.epoch,
        };
        (nets, Some((best, old_logs)))
    } else {
        (
            GanNetworks::build(&ctx.cfg.generator, &ctx.cfg.discriminator, ctx.cfg.gan.seed)?,
            None,
        )
    };
    let start = nets.start_epoch;
    let out = train_gan(&data.clean_train, &data.noisy_train, &data.noisy_dev, &am, nets, &ctx.cfg.gan)?;
    let last = out.epochs.last().map(|e| e.epoch).unwrap_or(start);

    write_gan_log(&dir, "gan", &ctx.hash, &out)?;
    let mut best = Checkpoint::from_generator(&out.generator, ctx.meta(out.best_epoch, Some(out.best_seer)));
    if let Some((old_best, old_logs)) = previous {
        for ((name, col), old) in GAN_LOGS.iter().zip(&old_logs) {
            merge_log(&dir.join(name), old, start, *col)?;
        }
        // Ties keep the earlier checkpoint, as early stopping does.
        if old_best.meta.dev_seer.is_some_and(|s| s <= out.best_seer) {
            best = old_best;
        }
    }
    best.save(&dir.join("generator.ggan"))?;
    Checkpoint::from_generator(&out.last_generator, ctx.meta(last, None)).save(&dir.join("generator.last.ggan"))?;
    Checkpoint::from_discriminator(&out.discriminator, ctx.meta(last, None)).save(&dir.join("discriminator.ggan"))?;
    if ctx.cfg.gan.keep_snapshots {
        let snaps = ctx.sub("gan/snapshots")?;
        for s in &out.snapshots {
            Checkpoint::from_generator(&s.generator, ctx.meta(s.epoch, Some(s.dev_seer)))
                .save(&snaps.join(format!("epoch-{:04}.ggan", s.epoch)))?;
        }
    }
    report_gan(&out);
    eprintln!(
        "kept generator: dev SeER {:.4} at epoch {}",
        best.meta.dev_seer.unwrap_or(f64::NAN),
        best.meta.epoch
    );
    Ok(())
}

fn report_gan(out: &GanOutcome) {
    eprintln!(
        "{} G / {} D steps over {} epochs",
        out.g_steps,
        out.d_steps,
        out.epochs.len().saturating_sub(1)
    );
}

fn finetune(ctx: &Ctx, am: &Option<PathBuf>, generator: &Option<PathBuf>) -> Result<()> {
    let data = ctx.data()?;
    let am = ctx.am(am)?;
    let g = ctx.generator(generator)?;
    let out = fine_tune(&am, &g, &data.noisy_train, &data.noisy_dev, &ctx.cfg.finetune)?;
    let dir = ctx.sub("finetune")?;
    Checkpoint::from_acoustic(&out.model, ctx.meta(out.best_epoch, Some(out.best_seer)))
        .save(&dir.join("am_ft.ggan"))?;
    write_am_log(&dir, "finetune", &ctx.hash, &out.log)?;
    eprintln!("GAN+FT dev SeER {:.4} at epoch {}", out.best_seer, out.best_epoch);
    Ok(())
}

/// Last wall-clock entry of a `*.timing.csv`.
fn logged_wall_clock(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path).ok()?;
    text.lines().last()?.split(',').nth(1)?.parse().ok()
}

fn train_mtr(ctx: &Ctx) -> Result<()> {
    let data = ctx.data()?;
    let cfg = &ctx.cfg;
    let dir = ctx.sub("mtr")?;
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
    let mtr_secs = start.elapsed().as_secs_f64();
    for (name, out) in [("noisy_only", &noisy_only), ("mtr", &mtr.am)] {
        Checkpoint::from_acoustic(&out.model, ctx.meta(out.best_epoch, Some(out.best_seer)))
            .save(&dir.join(format!("{name}.ggan")))?;
        write_am_log(&dir, name, &ctx.hash, &out.log)?;
    }
    let params = |m: &AcousticModel| m.params.num_trainable().to_string();
    let mut rows = vec![
        vec!["noisy-only".into(), params(&noisy_only.model), noisy_only.best_seer.to_string()],
        vec!["mtr".into(), params(&mtr.am.model), mtr.am.best_seer.to_string()],
    ];
    let mut timing = vec![vec!["mtr".into(), format!("{mtr_secs:.3}")]];
    let ft = ctx.dir.join("finetune/am_ft.ggan");
    let gen = ctx.dir.join("gan/generator.ggan");
    if ft.exists() && gen.exists() {
        let am = Checkpoint::load(&ft)?.to_acoustic()?;
        let g = Checkpoint::load(&gen)?.to_generator()?;
        let s = seer(&am, Some(&g), &data.noisy_dev)?;
        rows.push(vec!["gan+ft".into(), params(&am), s.to_string()]);
        let secs = logged_wall_clock(&ctx.dir.join("gan/gan.timing.csv")).unwrap_or(f64::NAN)
            + logged_wall_clock(&ctx.dir.join("finetune/finetune.timing.csv")).unwrap_or(f64::NAN);
        timing.push(vec!["gan+ft".into(), format!("{secs:.3}")]);
    }
    ctx.csv(&dir.join("comparison.csv"), &MTR_HEADER, &rows)?;
    ctx.csv(&dir.join("comparison.timing.csv"), &["system", "wall_clock_s"], &timing)?;
    eprintln!(
        "{} training utterances; noisy-only {:.4}, MTR {:.4} ({mtr_secs:.0} s)",
        mtr.train_utterances, noisy_only.best_seer, mtr.am.best_seer
    );
    Ok(())
}

fn grid(ctx: &Ctx, am: &Option<PathBuf>) -> Result<()> {
    let data = ctx.data()?;
    let am = ctx.am(am)?;
    let cfg = &ctx.cfg;
    let out = grid_search(&cfg.gan, &cfg.grid, |trial| {
        let mut trial = trial.clone();
        trial.max_epochs = cfg.grid_epochs;
        let r = run_gan(cfg, &trial, &data, &am)?;
        eprintln!(
            "  b={} lr_g={} lr_d={} λ={}: {:.4}",
            trial.batch_size, trial.lr_g, trial.lr_d, trial.loss.lambda, r.best_seer
        );
        Ok(r.best_seer)
    })?;
    let dir = ctx.sub("grid")?;
    let mut f = fs::File::create(dir.join("grid.csv"))?;
    writeln!(f, "# config_hash={}", ctx.hash)?;
    out.write_csv(f)?;
    let mut best = cfg.clone();
    best.gan = out.best.clone();
    best.save(&dir.join("best_config.toml"))?;
    eprintln!(
        "best b={} lr_g={} lr_d={} λ={}: dev SeER {:.4}",
        out.best.batch_size, out.best.lr_g, out.best.lr_d, out.best.loss.lambda, out.best_objective
    );
    Ok(())
}

fn evaluate_cmd(
    ctx: &Ctx,
    am: &Option<PathBuf>,
    generator: &Option<PathBuf>,
    split: Split,
    export: &[String],
) -> Result<()> {
    let data = ctx.data()?;
    let am = ctx.am(am)?;
    let g = match generator {
        Some(_) => Some(ctx.generator(generator)?),
        None => None,
    };
    let corpus = split_of(&data, split);
    let report = evaluate(&am, g.as_ref(), corpus, &data.senone_to_token(), DEFAULT_MIN_RUN)?;
    let dir = ctx.sub("eval")?;
    write_report(&dir, "report", &ctx.hash, &report)?;
    if !export.is_empty() {
        let g = g.ok_or_else(|| Error::Config("--export-features needs --generator".into()))?;
        let paired = match split {
            Split::CleanDev | Split::NoisyDev => PairedSplit::Dev,
            Split::CleanTest | Split::NoisyTest => PairedSplit::Test,
        };
        export_features(ctx, &g, paired, export, &dir)?;
    }
    let c = &report.counts;
    eprintln!(
        "SeER {:.4}, token error rate {:.4} (S {} D {} I {} of {})",
        report.seer, report.token_error_rate, c.substitutions, c.deletions, c.insertions, c.reference
    );
    Ok(())
}

fn export_features(ctx: &Ctx, g: &Generator, split: PairedSplit, ids: &[String], dir: &Path) -> Result<()> {
    let data = ctx.data()?;
    let (clean, noisy) = match split {
        PairedSplit::Dev => (&data.clean_dev, &data.noisy_dev),
        PairedSplit::Test => (&data.clean_test, &data.noisy_test),
    };
    let ids: Vec<String> = if ids.is_empty() {
        noisy.utterances.iter().take(1).map(|u| u.id.clone()).collect()
    } else {
        ids.to_vec()
    };
    let f = noisy.features;
    let mut header = Vec::with_capacity(3 * f);
    for side in ["clean", "corrupted", "generated"] {
        header.extend((0..f).map(|i| format!("{side}_{i}")));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for id in &ids {
        let pos = noisy
            .utterances
            .iter()
            .position(|u| &u.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no utterance `{id}` in the split")))?;
        let (c, n) = (&clean.utterances[pos], &noisy.utterances[pos]);
        let e = front_end(Some(g), n)?;
        let t = n.len();
        let rows: Vec<Vec<String>> = (0..t)
            .map(|j| {
                [&c.frames, &n.frames, &e]
                    .iter()
                    .flat_map(|m| (0..f).map(move |i| m.data()[i * t + j].to_string()))
                    .collect()
            })
            .collect();
        let path = dir.join(format!("features-{id}.csv"));
        ctx.csv(&path, &header, &rows)?;
        eprintln!("wrote {} ({t} frames × {} columns)", path.display(), 3 * f);
    }
    Ok(())
}

fn scaling(ctx: &Ctx, am: &Option<PathBuf>) -> Result<()> {
    let data = ctx.data()?;
    let am = ctx.am(am)?;
    let out = scaling_study(&ctx.cfg, &data, &am)?;
    let dir = ctx.sub("scaling")?;
    for (row, gan) in &out {
        Checkpoint::from_generator(&gan.generator, ctx.meta(gan.best_epoch, Some(gan.best_seer)))
            .save(&dir.join(format!("generator-{}h.ggan", row.hours)))?;
        eprintln!(
            "{} h ({} utterances): SeER {:.4}, token error rate {:.4}",
            row.hours, row.utterances, row.seer, row.token_error_rate
        );
    }
    ctx.csv(
        &dir.join("scaling.csv"),
        &SCALING_HEADER,
        &scaling_rows(out.iter().map(|(r, _)| r)),
    )
}

fn correlate(ctx: &Ctx, checkpoints: &Option<PathBuf>, am: &Option<PathBuf>, split: Split) -> Result<()> {
    let data = ctx.data()?;
    let am = ctx.am(am)?;
    let src = checkpoints.clone().unwrap_or_else(|| ctx.dir.join("gan/snapshots"));
    if !src.is_dir() {
        return Err(missing(&src, "run `ggan train-gan --snapshots` or pass --checkpoints"));
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(&src)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ggan") {
            let ck = Checkpoint::load(&path)?;
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            found.push((ck.meta.epoch, name, ck.to_generator()?));
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let models: Vec<(String, Option<&Generator>)> = found.iter().map(|(_, n, g)| (n.clone(), Some(g))).collect();
    let study = correlation_study(&am, &models, split_of(&data, split), &data.senone_to_token())?;
    let dir = ctx.sub("correlate")?;
    let mut f = fs::File::create(dir.join("correlation.csv"))?;
    writeln!(f, "# config_hash={}", ctx.hash)?;
    study.write_csv(f)?;
    println!("r = {:.4} over {} checkpoints", study.r, study.points.len());
    Ok(())
}

fn cross(ctx: &Ctx, generator: &Option<PathBuf>, am: &Option<PathBuf>, other: &Path) -> Result<()> {
    let data = ctx.data()?;
    let g = ctx.generator(generator)?;
    let guided = ctx.am(am)?;
    let other = ctx.am(&Some(other.to_path_buf()))?;
    let report = cross_model(&g, &guided, &other, &data.noisy_dev)?;
    let dir = ctx.sub("cross_model")?;
    ctx.csv(&dir.join("cross_model.csv"), &CROSS_MODEL_HEADER, &report.rows())?;
    println!(
        "guided: {:.4} -> {:.4} ({:+.4}); other: {:.4} -> {:.4} ({:+.4})",
        report.guided_baseline,
        report.guided_with_generator,
        report.guided_delta(),
        report.other_baseline,
        report.other_with_generator,
        report.other_delta()
    );
    Ok(())
}
