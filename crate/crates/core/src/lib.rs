//! Multichannel acoustic scene classification under partially missing channels.
//!
//! The crate covers the whole pipeline: multichannel WAV ingestion and a
//! synthetic scene generator ([`audio`]), log mel-band energy features
//! ([`features`]), the on-disk tensor and manifest formats ([`tensorio`]),
//! channel-level augmentation ([`augment`]), a from-scratch CNN with an RAdam
//! optimizer ([`model`]), and the cross-validated missing-channel evaluation
//! protocol ([`harness`]). The `mcasc` binary wraps it all ([`cli`]).

pub mod audio;
pub mod augment;
pub mod cli;
pub mod error;
pub mod features;
pub mod harness;
pub mod model;
pub mod seed;
pub mod tensorio;

pub use error::{Error, Result};
pub use tensorio::{FeatureTensor, LOG_FLOOR};
