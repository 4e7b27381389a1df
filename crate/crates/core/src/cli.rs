//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Progress goes to
//! standard error; results are written under `--out-dir`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio::{make_synthetic_dataset, SyntheticDatasetConfig};
use crate::augment::{sample_selection, apply_selection, AugmentKind, AugmentationPolicy};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::harness::{
    evaluate_trial, missing_sets_for, run_plan, summary_table, Arm, ExperimentPlan, ExperimentReport, FeatureSet,
    Imputation, NetworkSettings, RunOptions, TrainSettings, TrialOutcome, TrialRecord,
};
use crate::model::{train, ModelState, NetworkConfig, RAdamConfig, TrainConfig, TrainExample};
use crate::seed::derive_seed;
use crate::tensorio::{
    file_checksum, load_manifest, read_tensor, save_manifest, write_tensor, DatasetManifest, ManifestEntry, FOLDS,
};

#[derive(Parser, Debug)]
#[command(name = "mcasc", version, about = "Multichannel acoustic scene classification with missing channels")]
struct Cli {
    /// Global seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for experiments (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Directory that receives every output file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled multichannel dataset (WAV files + manifest.tsv).
    Synth(SynthArgs),
    /// Extract log mel-band energies for every clip of a manifest.
    Features(FeatureArgs),
    /// Apply one augmentation draw to a feature tensor.
    Augment(AugmentArgs),
    /// Train a model on every fold except the evaluation fold.
    Train(TrainArgs),
    /// Evaluate a trained model on one fold under missing channels.
    Eval(EvalArgs),
    /// Run a full cross-validated experiment from a plan or from flags.
    Experiment(ExperimentArgs),
    /// Render micro/macro-F tables from an experiment's summary.csv.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of scene classes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,
    /// Clips per class (assigned to the four folds round-robin).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,
    /// Channels per clip.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..=64))]
    channels: u64,
    /// Clip duration in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration_s: f64,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
}

#[derive(Args, Debug)]
struct FeatureArgs {
    /// Audio manifest (paths relative to its directory).
    #[arg(long)]
    manifest: PathBuf,
    /// Mel bands.
    #[arg(long, default_value_t = 40)]
    n_mels: usize,
    /// Frame length in milliseconds.
    #[arg(long, default_value_t = 40.0)]
    frame_ms: f64,
    /// Hop length in milliseconds.
    #[arg(long, default_value_t = 20.0)]
    hop_ms: f64,
    /// FFT size (default: next power of two of the frame length).
    #[arg(long)]
    fft_size: Option<usize>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Input feature tensor (.chft).
    #[arg(long)]
    tensor: PathBuf,
    /// none | channel-mask | channel-overwrite | channel-swap
    #[arg(long)]
    arm: AugmentKind,
    /// Smallest number of channels to touch.
    #[arg(long, default_value_t = 0)]
    k_min: usize,
    /// Largest number of channels to touch (default: half the channels).
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TrainingFlags {
    /// Training epochs.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    /// Mini-batch size.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(2..))]
    batch_size: u64,
    /// RAdam learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Output maps of the three convolution blocks.
    #[arg(long, default_value = "16,32,64", value_parser = parse_widths)]
    widths: [usize; 3],
    /// Hidden dense units.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
}

fn parse_widths(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    match parts[..] {
        [a, b, c] if a > 0 && b > 0 && c > 0 => Ok([a, b, c]),
        _ => Err(format!("expected three positive comma-separated widths, got {s:?}")),
    }
}

impl TrainingFlags {
    fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs as usize,
            batch_size: self.batch_size as usize,
            lr: self.lr,
        }
    }

    fn network_settings(&self) -> NetworkSettings {
        NetworkSettings {
            widths: self.widths,
            hidden: self.hidden,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Feature directory written by `features` (contains manifest.tsv).
    #[arg(long)]
    features: PathBuf,
    /// Held-out evaluation fold; training uses the others.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..FOLDS as i64))]
    fold: u8,
    /// none | channel-mask | channel-overwrite | channel-swap
    #[arg(long, default_value = "none")]
    arm: AugmentKind,
    #[arg(long, default_value_t = 0)]
    k_min: usize,
    /// Default: half the channels.
    #[arg(long)]
    k_max: Option<usize>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Feature directory written by `features`.
    #[arg(long)]
    features: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation fold.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..FOLDS as i64))]
    fold: u8,
    /// Number of missing channels per trial.
    #[arg(long, default_value_t = 0)]
    missing_count: usize,
    /// Explicit missing channels (comma separated); overrides --missing-count.
    #[arg(long, value_delimiter = ',')]
    missing: Option<Vec<usize>>,
    /// Random missing sets to evaluate.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// none | random-copy
    #[arg(long, default_value = "none")]
    impute: Imputation,
    /// Name recorded in the report.
    #[arg(long, default_value = "eval")]
    name: String,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Feature directory written by `features`.
    #[arg(long)]
    features: PathBuf,
    /// TOML experiment plan; without it a single-arm plan is built from flags.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// none | channel-mask | channel-overwrite | channel-swap (without --plan)
    #[arg(long, default_value = "none", conflicts_with = "plan")]
    arm: AugmentKind,
    /// none | random-copy (without --plan)
    #[arg(long, default_value = "none", conflicts_with = "plan")]
    impute: Imputation,
    /// Missing-channel counts (without --plan).
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 4], conflicts_with = "plan")]
    missing_counts: Vec<usize>,
    /// Random missing sets per count (without --plan).
    #[arg(long, default_value_t = 16, conflicts_with = "plan", value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding an experiment's summary.csv.
    #[arg(long)]
    report_dir: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Features(a) => cmd_features(cli, a),
        Command::Augment(a) => cmd_augment(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Experiment(a) => cmd_experiment(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    if !(a.duration_s > 0.0) {
        return Err(Error::Config("--duration-s must be positive".into()));
    }
    let cfg = SyntheticDatasetConfig {
        n_classes: a.classes as usize,
        clips_per_class: a.per_class as usize,
        channels: a.channels as usize,
        duration_s: a.duration_s,
        sample_rate_hz: a.sample_rate,
        seed: cli.seed,
    };
    let m = make_synthetic_dataset(&cfg, &cli.out_dir)?;
    eprintln!(
        "wrote {} clips ({} classes) and {}",
        m.entries.len(),
        m.label_set.len(),
        cli.out_dir.join("manifest.tsv").display()
    );
    Ok(())
}

fn cmd_features(cli: &Cli, a: &FeatureArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let audio_dir = a.manifest.parent().unwrap_or(Path::new("."));
    let cfg = FeatureConfig {
        n_mels: a.n_mels,
        frame_len_s: a.frame_ms / 1000.0,
        hop_len_s: a.hop_ms / 1000.0,
        fft_size: a.fft_size,
        ..FeatureConfig::default()
    };
    let mut out = DatasetManifest::new(manifest.label_set.clone());
    let mut extractors: Vec<(u32, FeatureExtractor)> = Vec::new();
    let mut dims = BTreeSet::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        let clip = crate::audio::load_wav(audio_dir.join(&e.path))?;
        let sr = clip.sample_rate_hz();
        if !extractors.iter().any(|(r, _)| *r == sr) {
            extractors.push((sr, FeatureExtractor::new(&cfg, sr)?));
        }
        let ex = &extractors.iter().find(|(r, _)| *r == sr).expect("inserted").1;
        let x = ex.extract(&clip)?;
        let d = x.dims();
        dims.insert((d.freq, d.time, d.channels));
        let rel = Path::new(&e.path).with_extension("chft").to_string_lossy().replace('\\', "/");
        let path = cli.out_dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        write_tensor(&x, &path)?;
        out.entries.push(ManifestEntry {
            path: rel,
            checksum: file_checksum(&path)?,
            ..e.clone()
        });
        if (i + 1) % 50 == 0 {
            eprintln!("extracted {}/{}", i + 1, manifest.entries.len());
        }
    }
    save_manifest(&out, cli.out_dir.join("manifest.tsv"))?;
    let mut summary = format!("clips\t{}\n", out.entries.len());
    for (f, t, c) in &dims {
        let _ = writeln!(summary, "dims\t{f}x{t}x{c}\nmel_bands (F)\t{f}\nframes (T)\t{t}\nchannels (C)\t{c}");
    }
    write_file(&cli.out_dir.join("features_summary.tsv"), &summary)?;
    eprint!("{summary}");
    Ok(())
}

fn cmd_augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let x = read_tensor(&a.tensor)?;
    let policy = AugmentationPolicy::new(
        a.arm,
        a.k_min,
        a.k_max.unwrap_or(x.channels() / 2),
        cli.seed,
    );
    let mut rng = crate::seed::rng_for(cli.seed, &[0xa09]);
    let (y, text) = if a.arm == AugmentKind::None {
        policy.validate(x.channels())?;
        (x.clone(), "kind\tnone\n".to_string())
    } else {
        let sel = sample_selection(&policy, x.channels(), &mut rng)?;
        let y = apply_selection(a.arm, &x, &sel)?;
        let join = |it: Vec<String>| it.join(",");
        let mut text = format!(
            "kind\t{}\ntargets\t{}\n",
            a.arm,
            join(sel.targets.iter().map(usize::to_string).collect())
        );
        if !sel.sources.is_empty() {
            let _ = writeln!(
                text,
                "sources\t{}",
                join(sel.sources.iter().map(|(t, s)| format!("{t}<-{s}")).collect())
            );
        }
        if !sel.permutation.is_empty() {
            let _ = writeln!(
                text,
                "permutation\t{}",
                join(sel.permutation.iter().map(|(t, s)| format!("{t}<-{s}")).collect())
            );
        }
        (y, text)
    };
    write_tensor(&y, cli.out_dir.join("augmented.chft"))?;
    write_file(&cli.out_dir.join("augment.tsv"), &text)?;
    eprint!("{text}");
    Ok(())
}

fn load_features(dir: &Path) -> Result<FeatureSet> {
    let manifest = load_manifest(dir.join("manifest.tsv"))?;
    FeatureSet::load(&manifest, dir)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let data = load_features(&a.features)?;
    let dims = data.dims().ok_or_else(|| Error::Config("no clips in feature set".into()))?;
    let net = a.training.network_settings();
    let net_cfg = NetworkConfig::scaled(dims, net.widths, net.hidden, data.n_classes());
    let arm = Arm {
        k_min: a.k_min,
        k_max: a.k_max,
        ..Arm::new(a.arm.as_str(), a.arm, Imputation::None)
    };
    let plan = ExperimentPlan {
        seed: cli.seed,
        ..ExperimentPlan::default()
    };
    let policy = crate::harness::arm_policy(&plan, &arm, dims.channels, a.fold);
    let clips = data.train_clips(a.fold);
    if clips.is_empty() {
        return Err(Error::EmptyTrainingSet(a.fold));
    }
    let examples: Vec<TrainExample<'_>> = clips
        .iter()
        .map(|c| TrainExample {
            uid: c.uid,
            label: c.label,
            features: &c.features,
        })
        .collect();
    let s = a.training.train_settings();
    let cfg = TrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        seed: derive_seed(cli.seed, &[0x7a1e, u64::from(a.fold)]),
        radam: RAdamConfig {
            lr: s.lr,
            ..RAdamConfig::default()
        },
    };
    eprintln!("training on {} clips ({} epochs)", examples.len(), s.epochs);
    let (state, log) = train(net_cfg, &examples, &policy, &cfg)?;
    state.save(cli.out_dir.join("model.chmd"))?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in log.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{e},{l}");
    }
    write_file(&cli.out_dir.join("training_log.csv"), &csv)?;
    eprintln!(
        "final loss {:.4}; wrote {}",
        log.epoch_losses.last().copied().unwrap_or(f64::NAN),
        cli.out_dir.join("model.chmd").display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let data = load_features(&a.features)?;
    let state = ModelState::load(&a.model)?;
    let channels = data.dims().ok_or_else(|| Error::Config("no clips in feature set".into()))?.channels;
    let sets: Vec<BTreeSet<usize>> = match &a.missing {
        Some(list) => {
            let set: BTreeSet<usize> = list.iter().copied().collect();
            if let Some(&c) = set.iter().find(|&&c| c >= channels) {
                return Err(Error::ChannelOutOfRange { index: c, channels });
            }
            vec![set; a.trials as usize]
        }
        None => missing_sets_for(cli.seed, channels, a.fold, a.missing_count, a.trials as usize)?,
    };
    let clips = data.eval_clips(a.fold);
    if clips.is_empty() {
        return Err(Error::Config(format!("fold {} has no clips", a.fold)));
    }
    let mut report = ExperimentReport {
        labels: data.labels.clone(),
        trials: Vec::new(),
        training: Vec::new(),
    };
    for (trial, m) in sets.into_iter().enumerate() {
        let seed = derive_seed(cli.seed, &[0xe7a1, u64::from(a.fold), m.len() as u64, trial as u64]);
        let outcome = evaluate_trial(&state.network, &clips, &m, a.impute, seed)?;
        if let TrialOutcome::Failed(why) = &outcome {
            eprintln!("trial {trial} failed: {why}");
        }
        report.trials.push(TrialRecord {
            arm: a.name.clone(),
            fold: a.fold,
            missing_count: m.len(),
            trial,
            missing: m,
            confusion: match outcome {
                TrialOutcome::Completed(c) => Some(c),
                TrialOutcome::Failed(_) => None,
            },
        });
    }
    finish_report(cli, &report)
}

fn finish_report(cli: &Cli, report: &ExperimentReport) -> Result<()> {
    report.write(&cli.out_dir)?;
    for c in report.cells() {
        eprintln!(
            "{} @ {} missing: micro-F {:.4}, macro-F {:.4} ({} trials, {} failed)",
            c.arm, c.missing_count, c.micro_f, c.macro_f, c.trials, c.failed
        );
    }
    let failed = report.failed_trials();
    if failed > 0 {
        return Err(Error::Config(format!("{failed} trial(s) failed; see report.csv")));
    }
    Ok(())
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let data = load_features(&a.features)?;
    let plan = match &a.plan {
        Some(p) => {
            let mut plan = ExperimentPlan::load(p)?;
            // The global seed is mixed in so one flag reseeds the whole run.
            plan.seed = derive_seed(plan.seed, &[cli.seed]);
            plan
        }
        None => ExperimentPlan {
            seed: cli.seed,
            missing_counts: a.missing_counts.clone(),
            trials_per_count: a.trials as usize,
            arms: vec![Arm::new(
                &format!("{} + {}", a.arm, a.impute),
                a.arm,
                a.impute,
            )],
            train: a.training.train_settings(),
            network: a.training.network_settings(),
            ..ExperimentPlan::default()
        },
    };
    let report = run_plan(
        &plan,
        &data,
        RunOptions {
            jobs: cli.jobs,
            progress: true,
        },
    )?;
    finish_report(cli, &report)
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let path = a.report_dir.join("summary.csv");
    let summary = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let table = format!(
        "{}\n{}",
        summary_table(&summary, false)?,
        summary_table(&summary, true)?
    );
    write_file(&cli.out_dir.join("tables.txt"), &table)?;
    print!("{table}");
    Ok(())
}
