//! Convolutional scene classifier, its optimizer and training loop.

pub mod config;
pub mod layers;
pub mod network;
pub mod radam;
pub mod state;
pub mod train;

#[cfg(test)]
mod tests;

pub use config::{ConvSpec, LayerShape, NetworkConfig};
pub use network::{Batch, BnRunning, Mode, Network, PassOptions, PARAM_NAMES};
pub use radam::{RAdam, RAdamConfig};
pub use state::ModelState;
pub use train::{train, train_epochs, TrainConfig, TrainExample, TrainingLog};
