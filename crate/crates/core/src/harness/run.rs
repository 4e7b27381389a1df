use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::data::{FeatureSet, LabeledFeatures};
use super::metrics::Confusion;
use super::plan::{Arm, ExperimentPlan, Imputation, MATCHED_NAME};
use super::report::{ExperimentReport, TrainingRecord, TrialRecord};
use super::sampler::sample_missing_sets;
use crate::augment::{channel_mask, random_copy, AugmentKind, AugmentationPolicy};
use crate::error::{Error, Result};
use crate::model::{train, Batch, ModelState, Network, NetworkConfig, RAdamConfig, TrainConfig, TrainExample};
use crate::seed::{derive_seed, rng_for};
use crate::tensorio::FeatureTensor;

const MISSING_STREAM: u64 = 0x6d15;
const TRAIN_STREAM: u64 = 0x7a1e;
const AUGMENT_STREAM: u64 = 0xa06e;
const EVAL_STREAM: u64 = 0xe7a1;
const EVAL_BATCH: usize = 64;

/// How the harness runs: worker threads and progress reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 means all available cores.
    pub jobs: usize,
    /// Progress lines on standard error.
    pub progress: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 0,
            progress: false,
        }
    }
}

/// Result of one evaluation pass over a fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrialOutcome {
    Completed(Confusion),
    /// Random copy had no donor (every channel missing).
    Failed(String),
}

/// Masks `missing` on every evaluation clip, optionally imputes it by random
/// copy, and accumulates argmax predictions. Masking the features is
/// bit-identical to zeroing the audio channels before extraction.
///
/// Clip `uid`'s imputation stream is `rng_for(seed, [uid])`, so predictions
/// do not depend on clip order.
pub fn evaluate_trial(
    network: &Network,
    clips: &[&LabeledFeatures],
    missing: &BTreeSet<usize>,
    imputation: Imputation,
    seed: u64,
) -> Result<TrialOutcome> {
    let n_classes = network.config().n_classes;
    let mut confusion = Confusion::new(n_classes);
    for chunk in clips.chunks(EVAL_BATCH) {
        let mut inputs: Vec<FeatureTensor> = Vec::with_capacity(chunk.len());
        for clip in chunk {
            let masked = channel_mask(&clip.features, missing)?;
            let x = match imputation {
                Imputation::None => masked,
                Imputation::RandomCopy => {
                    match random_copy(&masked, missing, &mut rng_for(seed, &[clip.uid])) {
                        Ok(x) => x,
                        Err(Error::NoDonorChannel) => {
                            return Ok(TrialOutcome::Failed(
                                "random copy has no donor: every channel is missing".into(),
                            ))
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            inputs.push(x);
        }
        let refs: Vec<&FeatureTensor> = inputs.iter().collect();
        let predictions = network.predict(&Batch::from_tensors(&refs)?)?;
        for (clip, p) in chunk.iter().zip(predictions) {
            if clip.label >= n_classes {
                return Err(Error::Config(format!("clip {} label out of range", clip.id)));
            }
            confusion.add(clip.label, p);
        }
    }
    Ok(TrialOutcome::Completed(confusion))
}

/// Missing sets for `(fold, count)`; shared by every arm and by the matched
/// condition (common random numbers).
pub fn missing_sets_for(
    seed: u64,
    channels: usize,
    fold: u8,
    count: usize,
    trials: usize,
) -> Result<Vec<BTreeSet<usize>>> {
    let mut rng = rng_for(seed, &[MISSING_STREAM, u64::from(fold), count as u64]);
    sample_missing_sets(channels, count, trials, &mut rng)
}

fn network_config(plan: &ExperimentPlan, data: &FeatureSet) -> Result<NetworkConfig> {
    let dims = data
        .dims()
        .ok_or_else(|| Error::Plan("feature set is empty".into()))?;
    let cfg = NetworkConfig::scaled(dims, plan.network.widths, plan.network.hidden, data.n_classes());
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(plan: &ExperimentPlan, fold: u8) -> TrainConfig {
    TrainConfig {
        epochs: plan.train.epochs,
        batch_size: plan.train.batch_size,
        seed: derive_seed(plan.seed, &[TRAIN_STREAM, u64::from(fold)]),
        radam: RAdamConfig {
            lr: plan.train.lr,
            ..RAdamConfig::default()
        },
    }
}

/// Augmentation policy of `arm` when training for `fold`.
pub fn arm_policy(plan: &ExperimentPlan, arm: &Arm, channels: usize, fold: u8) -> AugmentationPolicy {
    AugmentationPolicy::new(
        arm.augmentation,
        arm.k_min,
        arm.k_max_for(channels),
        derive_seed(plan.seed, &[AUGMENT_STREAM, u64::from(fold)]),
    )
}

fn check_inputs(plan: &ExperimentPlan, data: &FeatureSet) -> Result<usize> {
    let dims = data
        .dims()
        .ok_or_else(|| Error::Plan("feature set is empty".into()))?;
    plan.validate(Some(dims.channels))?;
    for &fold in &plan.folds {
        if data.train_clips(fold).len() < 2 {
            return Err(Error::EmptyTrainingSet(fold));
        }
        if data.eval_clips(fold).is_empty() {
            return Err(Error::Plan(format!("fold {fold} has no evaluation clips")));
        }
    }
    Ok(dims.channels)
}

fn examples<'a>(clips: &[&'a LabeledFeatures]) -> Vec<TrainExample<'a>> {
    clips
        .iter()
        .map(|c| TrainExample {
            uid: c.uid,
            label: c.label,
            features: &c.features,
        })
        .collect()
}

fn with_pool<T: Send>(opts: RunOptions, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn record(arm: &str, fold: u8, count: usize, trial: usize, missing: BTreeSet<usize>, outcome: TrialOutcome) -> TrialRecord {
    TrialRecord {
        arm: arm.to_string(),
        fold,
        missing_count: count,
        trial,
        missing,
        confusion: match outcome {
            TrialOutcome::Completed(c) => Some(c),
            TrialOutcome::Failed(_) => None,
        },
    }
}

/// Trains one model per (arm, fold) with the arm's augmentation and scores
/// it on every sampled missing set of every count.
pub fn run_experiment(plan: &ExperimentPlan, data: &FeatureSet, opts: RunOptions) -> Result<ExperimentReport> {
    let channels = check_inputs(plan, data)?;
    let net_cfg = network_config(plan, data)?;
    with_pool(opts, || {
        let jobs: Vec<(usize, u8)> = (0..plan.arms.len())
            .flat_map(|a| plan.folds.iter().map(move |&f| (a, f)))
            .collect();
        let models = jobs
            .par_iter()
            .map(|&(a, fold)| {
                let arm = &plan.arms[a];
                let (state, log) = train(
                    net_cfg.clone(),
                    &examples(&data.train_clips(fold)),
                    &arm_policy(plan, arm, channels, fold),
                    &train_config(plan, fold),
                )?;
                if opts.progress {
                    eprintln!(
                        "trained {:?} fold {fold}: final loss {:.4}",
                        arm.name,
                        log.epoch_losses.last().copied().unwrap_or(f64::NAN)
                    );
                }
                Ok((state, log))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut cells = Vec::new();
        for (j, &(a, fold)) in jobs.iter().enumerate() {
            for &count in &plan.missing_counts {
                let sets = missing_sets_for(plan.seed, channels, fold, count, plan.trials_per_count)?;
                for (trial, m) in sets.into_iter().enumerate() {
                    cells.push((j, a, fold, count, trial, m));
                }
            }
        }
        let trials = cells
            .into_par_iter()
            .map(|(j, a, fold, count, trial, m)| {
                let arm = &plan.arms[a];
                let seed = derive_seed(plan.seed, &[EVAL_STREAM, u64::from(fold), count as u64, trial as u64]);
                let outcome = evaluate_trial(&models[j].0.network, &data.eval_clips(fold), &m, arm.imputation, seed)?;
                Ok(record(&arm.name, fold, count, trial, m, outcome))
            })
            .collect::<Result<Vec<_>>>()?;
        if opts.progress {
            eprintln!("evaluated {} trials", trials.len());
        }
        let training = jobs
            .iter()
            .zip(&models)
            .map(|(&(a, fold), (_, log))| TrainingRecord {
                arm: plan.arms[a].name.clone(),
                fold,
                missing: BTreeSet::new(),
                epoch_losses: log.epoch_losses.clone(),
            })
            .collect();
        Ok(ExperimentReport {
            labels: data.labels.clone(),
            trials,
            training,
        })
    })?
}

/// Applies each sampled missing set to training and evaluation clips alike
/// (no augmentation, no imputation). Models are cached per (fold, set).
pub fn run_matched_missing(plan: &ExperimentPlan, data: &FeatureSet, opts: RunOptions) -> Result<ExperimentReport> {
    let channels = check_inputs(plan, data)?;
    let net_cfg = network_config(plan, data)?;
    let matched = plan
        .matched
        .clone()
        .unwrap_or(super::plan::MatchedSettings {
            missing_counts: plan.missing_counts.clone(),
            trials_per_count: plan.trials_per_count,
        });
    let none = Arm::new(MATCHED_NAME, AugmentKind::None, Imputation::None);
    with_pool(opts, || {
        let mut cells = Vec::new();
        for &fold in &plan.folds {
            for &count in &matched.missing_counts {
                let sets = missing_sets_for(plan.seed, channels, fold, count, matched.trials_per_count)?;
                for (trial, m) in sets.into_iter().enumerate() {
                    cells.push((fold, count, trial, m));
                }
            }
        }
        let keys: BTreeSet<(u8, BTreeSet<usize>)> = cells.iter().map(|(f, _, _, m)| (*f, m.clone())).collect();
        let keys: Vec<(u8, BTreeSet<usize>)> = keys.into_iter().collect();
        let models: Vec<(ModelState, Vec<f64>)> = keys
            .par_iter()
            .map(|(fold, m)| {
                let masked: Vec<LabeledFeatures> = data
                    .train_clips(*fold)
                    .into_iter()
                    .map(|c| {
                        Ok(LabeledFeatures {
                            features: channel_mask(&c.features, m)?,
                            ..c.clone()
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&LabeledFeatures> = masked.iter().collect();
                let (state, log) = train(
                    net_cfg.clone(),
                    &examples(&refs),
                    &arm_policy(plan, &none, channels, *fold),
                    &train_config(plan, *fold),
                )?;
                if opts.progress {
                    eprintln!("trained matched model fold {fold} missing {m:?}");
                }
                Ok((state, log.epoch_losses))
            })
            .collect::<Result<Vec<_>>>()?;
        let index: BTreeMap<&(u8, BTreeSet<usize>), usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let trials = cells
            .into_par_iter()
            .map(|(fold, count, trial, m)| {
                let model = &models[index[&(fold, m.clone())]].0;
                let seed = derive_seed(plan.seed, &[EVAL_STREAM, u64::from(fold), count as u64, trial as u64]);
                let outcome = evaluate_trial(&model.network, &data.eval_clips(fold), &m, Imputation::None, seed)?;
                Ok(record(MATCHED_NAME, fold, count, trial, m, outcome))
            })
            .collect::<Result<Vec<_>>>()?;
        let training = keys
            .iter()
            .zip(&models)
            .map(|((fold, m), (_, losses))| TrainingRecord {
                arm: MATCHED_NAME.to_string(),
                fold: *fold,
                missing: m.clone(),
                epoch_losses: losses.clone(),
            })
            .collect();
        Ok(ExperimentReport {
            labels: data.labels.clone(),
            trials,
            training,
        })
    })?
}

/// Every arm of the plan, plus the matched condition when the plan asks for it.
pub fn run_plan(plan: &ExperimentPlan, data: &FeatureSet, opts: RunOptions) -> Result<ExperimentReport> {
    let mut report = if plan.arms.is_empty() {
        ExperimentReport {
            labels: data.labels.clone(),
            trials: Vec::new(),
            training: Vec::new(),
        }
    } else {
        run_experiment(plan, data, opts)?
    };
    if plan.matched.is_some() {
        let m = run_matched_missing(plan, data, opts)?;
        report.trials.extend(m.trials);
        report.training.extend(m.training);
    }
    Ok(report)
}
