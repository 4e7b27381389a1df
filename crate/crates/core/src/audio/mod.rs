//! Multichannel clips: WAV ingestion, synthetic scenes, and missing-channel simulation.

mod synth;
mod wav;

use std::collections::BTreeSet;

pub use synth::{
    make_synthetic_dataset, scene_labels, synth_clip, synthesize_dataset, SceneSpec,
    SyntheticClip, SyntheticDatasetConfig,
};
pub use wav::{load_wav, write_wav};

use crate::error::{Error, Result};

/// Time-domain audio, one sample vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelClip {
    samples: Vec<Vec<f64>>,
    sample_rate_hz: u32,
    pub label: Option<String>,
    missing: BTreeSet<usize>,
}

impl MultichannelClip {
    pub fn new(samples: Vec<Vec<f64>>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Shape("clip has no channels".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let len = samples[0].len();
        if samples.iter().any(|ch| ch.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        Ok(MultichannelClip {
            samples,
            sample_rate_hz,
            label: None,
            missing: BTreeSet::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn missing(&self) -> &BTreeSet<usize> {
        &self.missing
    }

    pub fn is_missing(&self, c: usize) -> bool {
        self.missing.contains(&c)
    }
}

/// Simulates failed microphones: the listed channels become exact digital
/// silence and are recorded as missing. Other channels are untouched.
pub fn zero_channels(clip: &MultichannelClip, missing: &BTreeSet<usize>) -> Result<MultichannelClip> {
    let channels = clip.channels();
    if let Some(&bad) = missing.iter().find(|&&c| c >= channels) {
        return Err(Error::ChannelOutOfRange {
            index: bad,
            channels,
        });
    }
    let mut out = clip.clone();
    for &c in missing {
        out.samples[c].iter_mut().for_each(|s| *s = 0.0);
        out.missing.insert(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_clip(channels: usize, len: usize) -> MultichannelClip {
        let samples = (0..channels)
            .map(|c| (0..len).map(|n| ((n + c) as f64 * 0.01).sin() * 0.5).collect())
            .collect();
        MultichannelClip::new(samples, 16_000).unwrap()
    }

    #[test]
    fn empty_set_is_identity() {
        let clip = ramp_clip(3, 50);
        assert_eq!(zero_channels(&clip, &BTreeSet::new()).unwrap(), clip);
    }

    #[test]
    fn all_channels_missing() {
        let clip = ramp_clip(4, 30);
        let all: BTreeSet<usize> = (0..4).collect();
        let z = zero_channels(&clip, &all).unwrap();
        assert!(z.samples().iter().flatten().all(|&s| s == 0.0));
        assert_eq!(z.missing(), &all);
    }

    #[test]
    fn single_channel_zeroed_others_identical() {
        let clip = ramp_clip(5, 40);
        let z = zero_channels(&clip, &BTreeSet::from([3])).unwrap();
        assert_eq!(z.channel(3).iter().map(|s| s * s).sum::<f64>(), 0.0);
        for c in [0, 1, 2, 4] {
            assert_eq!(z.channel(c), clip.channel(c));
        }
    }

    #[test]
    fn out_of_range_channel() {
        let clip = ramp_clip(2, 10);
        let err = zero_channels(&clip, &BTreeSet::from([2])).unwrap_err();
        assert!(err.to_string().starts_with("channel out of range"));
    }

    proptest! {
        #[test]
        fn idempotent_and_union(a in proptest::collection::btree_set(0usize..6, 0..6),
                                b in proptest::collection::btree_set(0usize..6, 0..6)) {
            let clip = ramp_clip(6, 20);
            let once = zero_channels(&clip, &a).unwrap();
            prop_assert_eq!(&zero_channels(&once, &a).unwrap(), &once);
            let seq = zero_channels(&once, &b).unwrap();
            let union: BTreeSet<usize> = a.union(&b).copied().collect();
            prop_assert_eq!(seq, zero_channels(&clip, &union).unwrap());
        }
    }
}
