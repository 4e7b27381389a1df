//! Evaluation protocol: missing-channel trials, random-copy imputation,
//! fold-wise cross-validation, F-scores and report files.

mod data;
pub mod metrics;
pub mod plan;
mod report;
mod run;
pub mod sampler;

pub use data::{feature_path, FeatureSet, LabeledFeatures};
pub use metrics::{confusion_recall_percent, micro_macro_f, Confusion};
pub use plan::{standard_arms, Arm, ExperimentPlan, Imputation, MatchedSettings, NetworkSettings, TrainSettings, MATCHED_NAME};
pub use report::{summary_table, CellSummary, ExperimentReport, TrainingRecord, TrialRecord};
pub use run::{arm_policy, evaluate_trial, missing_sets_for, run_experiment, run_matched_missing, run_plan, RunOptions, TrialOutcome};
pub use sampler::{binomial, sample_missing_sets};
