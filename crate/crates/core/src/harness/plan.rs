//! Experiment plans, read from TOML.
//!
//! ```toml
//! seed = 7
//! missing_counts = [0, 1, 2, 4]
//! trials_per_count = 16
//! folds = [0, 1, 2, 3]          # optional, default all four
//!
//! [train]                       # optional
//! epochs = 50
//! batch_size = 32
//! lr = 0.001
//!
//! [network]                     # optional
//! widths = [16, 32, 64]
//! hidden = 32
//!
//! [[arm]]
//! name = "channel swap + random copy"
//! augmentation = "swap"         # none | mask | overwrite | swap
//! imputation = "random-copy"    # none | random-copy
//! k_min = 0                     # optional
//! k_max = 4                     # optional, default floor(C / 2)
//!
//! [matched]                     # optional: train and test on the same missing set
//! missing_counts = [4]          # optional, default the plan's counts
//! trials_per_count = 4          # optional, default the plan's trials
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::augment::AugmentKind;
use crate::error::{Error, Result};
use crate::model::RAdamConfig;
use crate::tensorio::FOLDS;

/// Evaluation-time treatment of missing channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Imputation {
    #[default]
    None,
    RandomCopy,
}

impl Imputation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Imputation::None => "none",
            Imputation::RandomCopy => "random-copy",
        }
    }
}

impl fmt::Display for Imputation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Imputation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Imputation::None),
            "random-copy" | "random_copy" | "copy" => Ok(Imputation::RandomCopy),
            other => Err(Error::Config(format!("unknown imputation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub augmentation: AugmentKind,
    pub imputation: Imputation,
    pub k_min: usize,
    /// `None` means half the channel count (rounded down).
    pub k_max: Option<usize>,
}

impl Arm {
    pub fn new(name: &str, augmentation: AugmentKind, imputation: Imputation) -> Self {
        Arm {
            name: name.to_string(),
            augmentation,
            imputation,
            k_min: 0,
            k_max: None,
        }
    }

    pub fn k_max_for(&self, channels: usize) -> usize {
        self.k_max.unwrap_or(channels / 2)
    }

    /// File-name-safe form of the arm name.
    pub fn slug(&self) -> String {
        slug(&self.name)
    }
}

pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// The four standard comparison arms.
pub fn standard_arms() -> Vec<Arm> {
    vec![
        Arm::new("w/o augmentation", AugmentKind::None, Imputation::None),
        Arm::new("channel mask", AugmentKind::Mask, Imputation::None),
        Arm::new("channel overwrite + random copy", AugmentKind::Overwrite, Imputation::RandomCopy),
        Arm::new("channel swap + random copy", AugmentKind::Swap, Imputation::RandomCopy),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 50,
            batch_size: 32,
            lr: RAdamConfig::default().lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSettings {
    pub widths: [usize; 3],
    pub hidden: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings {
            widths: [16, 32, 64],
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSettings {
    pub missing_counts: Vec<usize>,
    pub trials_per_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub folds: Vec<u8>,
    pub missing_counts: Vec<usize>,
    pub trials_per_count: usize,
    pub arms: Vec<Arm>,
    pub train: TrainSettings,
    pub network: NetworkSettings,
    pub matched: Option<MatchedSettings>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            seed: 0,
            folds: (0..FOLDS).collect(),
            missing_counts: vec![0, 1, 2, 4, 8, 12],
            trials_per_count: 16,
            arms: standard_arms(),
            train: TrainSettings::default(),
            network: NetworkSettings::default(),
            matched: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    seed: u64,
    missing_counts: Vec<usize>,
    trials_per_count: usize,
    folds: Option<Vec<u8>>,
    train: Option<TrainFile>,
    network: Option<NetworkFile>,
    #[serde(default)]
    arm: Vec<ArmFile>,
    matched: Option<MatchedFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    widths: Option<[usize; 3]>,
    hidden: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmFile {
    name: String,
    augmentation: String,
    imputation: Option<String>,
    k_min: Option<usize>,
    k_max: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchedFile {
    missing_counts: Option<Vec<usize>>,
    trials_per_count: Option<usize>,
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: PlanFile = toml::from_str(text).map_err(|e| Error::Plan(e.to_string()))?;
        let t = raw.train.unwrap_or(TrainFile {
            epochs: None,
            batch_size: None,
            lr: None,
        });
        let d = TrainSettings::default();
        let n = raw.network.unwrap_or(NetworkFile {
            widths: None,
            hidden: None,
        });
        let dn = NetworkSettings::default();
        let arms = raw
            .arm
            .into_iter()
            .map(|a| {
                Ok(Arm {
                    augmentation: a.augmentation.parse().map_err(|e: Error| Error::Plan(e.to_string()))?,
                    imputation: match a.imputation {
                        Some(s) => s.parse().map_err(|e: Error| Error::Plan(e.to_string()))?,
                        None => Imputation::None,
                    },
                    k_min: a.k_min.unwrap_or(0),
                    k_max: a.k_max,
                    name: a.name,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let matched = raw.matched.map(|m| MatchedSettings {
            missing_counts: m.missing_counts.unwrap_or_else(|| raw.missing_counts.clone()),
            trials_per_count: m.trials_per_count.unwrap_or(raw.trials_per_count),
        });
        let plan = ExperimentPlan {
            seed: raw.seed,
            folds: raw.folds.unwrap_or_else(|| (0..FOLDS).collect()),
            missing_counts: raw.missing_counts,
            trials_per_count: raw.trials_per_count,
            arms,
            train: TrainSettings {
                epochs: t.epochs.unwrap_or(d.epochs),
                batch_size: t.batch_size.unwrap_or(d.batch_size),
                lr: t.lr.unwrap_or(d.lr),
            },
            network: NetworkSettings {
                widths: n.widths.unwrap_or(dn.widths),
                hidden: n.hidden.unwrap_or(dn.hidden),
            },
            matched,
        };
        plan.validate(None)?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Plan(m) => Error::Plan(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks internal consistency, and the channel count when known.
    pub fn validate(&self, channels: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(Error::Plan(m));
        if self.arms.is_empty() && self.matched.is_none() {
            return bad("plan has no arms".into());
        }
        let mut names = BTreeSet::new();
        let mut slugs = BTreeSet::new();
        for arm in &self.arms {
            if arm.slug().is_empty() {
                return bad(format!("arm name {:?} has no usable characters", arm.name));
            }
            if !names.insert(arm.name.clone()) || !slugs.insert(arm.slug()) {
                return bad(format!("duplicate arm {:?}", arm.name));
            }
            if arm.slug() == MATCHED_SLUG {
                return bad(format!("arm name {:?} is reserved", arm.name));
            }
        }
        if self.missing_counts.is_empty() {
            return bad("missing_counts is empty".into());
        }
        if self.trials_per_count == 0 {
            return bad("trials_per_count must be at least 1".into());
        }
        let folds: BTreeSet<u8> = self.folds.iter().copied().collect();
        if folds.is_empty() || folds.len() != self.folds.len() || folds.iter().any(|&f| f >= FOLDS) {
            return bad(format!("folds must be distinct values in 0..{FOLDS}"));
        }
        if self.train.epochs == 0 || self.train.batch_size < 2 || !(self.train.lr > 0.0) {
            return bad("train needs epochs >= 1, batch_size >= 2 and lr > 0".into());
        }
        if self.network.widths.contains(&0) || self.network.hidden == 0 {
            return bad("network widths and hidden size must be positive".into());
        }
        if let Some(m) = &self.matched {
            if m.missing_counts.is_empty() || m.trials_per_count == 0 {
                return bad("matched section needs counts and trials".into());
            }
        }
        if let Some(c) = channels {
            let counts = self
                .missing_counts
                .iter()
                .chain(self.matched.iter().flat_map(|m| m.missing_counts.iter()));
            for &k in counts {
                if k > c {
                    return bad(format!("missing count {k} exceeds {c} channels"));
                }
            }
            for arm in &self.arms {
                let k_max = arm.k_max_for(c);
                if arm.k_min > k_max || (arm.augmentation != AugmentKind::None && k_max >= c) {
                    return bad(format!(
                        "arm {:?}: need k_min <= k_max < {c} (got {}..={k_max})",
                        arm.name, arm.k_min
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Report name of the matched-missing condition.
pub const MATCHED_NAME: &str = "matched missing";
pub(crate) const MATCHED_SLUG: &str = "matched-missing";
