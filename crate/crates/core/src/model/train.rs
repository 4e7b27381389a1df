//! Mini-batch training with per-clip augmentation.

use rand::seq::SliceRandom;

use super::network::{Batch, PassOptions};
use super::radam::RAdamConfig;
use super::state::ModelState;
use super::config::NetworkConfig;
use crate::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};
use crate::tensorio::FeatureTensor;

const SHUFFLE_STREAM: u64 = 0x5f0f;
const INIT_STREAM: u64 = 0x1a17;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub radam: RAdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            seed: 0,
            radam: RAdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        self.radam.validate()
    }
}

/// One training clip. `uid` keys the clip's augmentation stream, so results
/// do not depend on the order examples are supplied in.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub uid: u64,
    pub label: usize,
    pub features: &'a FeatureTensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Mean training loss per epoch (over the augmented batches).
    pub epoch_losses: Vec<f64>,
}

/// Trains a freshly initialised network.
pub fn train(
    net_cfg: NetworkConfig,
    examples: &[TrainExample<'_>],
    policy: &AugmentationPolicy,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainingLog)> {
    cfg.validate()?;
    let mut state = ModelState::new(net_cfg, cfg.radam, derive_seed(cfg.seed, &[INIT_STREAM]))?;
    let log = train_epochs(&mut state, examples, policy, cfg, 0)?;
    Ok((state, log))
}

/// Continues training `state` for `cfg.epochs` epochs, numbering them from
/// `first_epoch` (augmentation and shuffling streams are keyed by epoch).
pub fn train_epochs(
    state: &mut ModelState,
    examples: &[TrainExample<'_>],
    policy: &AugmentationPolicy,
    cfg: &TrainConfig,
    first_epoch: usize,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    policy.validate(state.network.config().input.channels)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    // Canonical order first so shuffles are independent of input order.
    order.sort_by_key(|&i| (examples[i].uid, i));
    let mut log = TrainingLog::default();
    for epoch in first_epoch..first_epoch + cfg.epochs {
        let mut shuffled = order.clone();
        shuffled.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in shuffled.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let augmented = chunk
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let mut rng = rng_for(policy.rng_seed, &[epoch as u64, ex.uid]);
                    policy.apply(ex.features, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FeatureTensor> = augmented.iter().collect();
            let batch = Batch::from_tensors(&refs)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| examples[i].label).collect();
            let (loss, grads) =
                state
                    .network
                    .loss_and_grad(&batch, &labels, PassOptions::TRAIN, Some(&mut state.rng))?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss {loss} in epoch {epoch}")));
            }
            state.optimizer.step(state.network.params_mut(), &grads)?;
            total += loss;
            batches += 1;
        }
        log.epoch_losses.push(if batches == 0 { f64::NAN } else { total / batches as f64 });
    }
    Ok(log)
}
