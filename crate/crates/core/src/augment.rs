//! Channel-level augmentation operators and evaluation-time random copy.
//!
//! All operators read exclusively from the input tensor and return a new
//! one, so the result never depends on the order in which targets are
//! visited.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorio::FeatureTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AugmentKind {
    #[default]
    None,
    Mask,
    Overwrite,
    Swap,
}

impl AugmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Mask => "mask",
            AugmentKind::Overwrite => "overwrite",
            AugmentKind::Swap => "swap",
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "no" | "w/o-augmentation" => Ok(AugmentKind::None),
            "mask" | "channel-mask" => Ok(AugmentKind::Mask),
            "overwrite" | "channel-overwrite" => Ok(AugmentKind::Overwrite),
            "swap" | "channel-swap" => Ok(AugmentKind::Swap),
            other => Err(Error::Config(format!("unknown augmentation {other:?}"))),
        }
    }
}

/// Which operator to apply and how many channels it touches per draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentationPolicy {
    pub kind: AugmentKind,
    pub k_min: usize,
    pub k_max: usize,
    pub rng_seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            kind: AugmentKind::None,
            k_min: 0,
            k_max: 8,
            rng_seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn new(kind: AugmentKind, k_min: usize, k_max: usize, rng_seed: u64) -> Self {
        AugmentationPolicy {
            kind,
            k_min,
            k_max,
            rng_seed,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "k_min {} exceeds k_max {}",
                self.k_min, self.k_max
            )));
        }
        if self.kind != AugmentKind::None && self.k_max >= channels {
            return Err(Error::Config(format!(
                "k_max {} must be below the channel count {channels}",
                self.k_max
            )));
        }
        Ok(())
    }

    /// Draws a selection and applies the operator. `None` returns the input unchanged.
    pub fn apply<R: Rng + ?Sized>(&self, x: &FeatureTensor, rng: &mut R) -> Result<FeatureTensor> {
        if self.kind == AugmentKind::None {
            return Ok(x.clone());
        }
        let sel = sample_selection(self, x.channels(), rng)?;
        apply_selection(self.kind, x, &sel)
    }
}

/// Channels chosen for one augmentation draw.
///
/// `sources[c]` is the donor of target `c` (overwrite). `permutation[c]` is
/// the channel whose original plane lands in `c` (swap).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelSelection {
    pub targets: BTreeSet<usize>,
    pub sources: BTreeMap<usize, usize>,
    pub permutation: BTreeMap<usize, usize>,
}

impl ChannelSelection {
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Draws `k ~ U{k_min..=k_max}` distinct targets, then per-target donors
/// (overwrite) or a uniform permutation of the targets (swap).
pub fn sample_selection<R: Rng + ?Sized>(
    policy: &AugmentationPolicy,
    channels: usize,
    rng: &mut R,
) -> Result<ChannelSelection> {
    policy.validate(channels)?;
    let k = rng.random_range(policy.k_min..=policy.k_max);
    let mut chosen: Vec<usize> = index::sample(rng, channels, k).into_vec();
    chosen.sort_unstable();
    let targets: BTreeSet<usize> = chosen.iter().copied().collect();
    let mut sel = ChannelSelection {
        targets,
        ..Default::default()
    };
    match policy.kind {
        AugmentKind::Overwrite if k > 0 => {
            let donors: Vec<usize> = (0..channels).filter(|c| !sel.targets.contains(c)).collect();
            if donors.is_empty() {
                return Err(Error::NoSourceChannel);
            }
            for &t in &chosen {
                sel.sources.insert(t, donors[rng.random_range(0..donors.len())]);
            }
        }
        AugmentKind::Swap => {
            let mut shuffled = chosen.clone();
            shuffled.shuffle(rng);
            sel.permutation = chosen.into_iter().zip(shuffled).collect();
        }
        _ => {}
    }
    Ok(sel)
}

pub fn apply_selection(kind: AugmentKind, x: &FeatureTensor, sel: &ChannelSelection) -> Result<FeatureTensor> {
    match kind {
        AugmentKind::None => Ok(x.clone()),
        AugmentKind::Mask => channel_mask(x, &sel.targets),
        AugmentKind::Overwrite => channel_overwrite(x, sel),
        AugmentKind::Swap => channel_swap(x, sel),
    }
}

/// Sets every target plane to `LOG_FLOOR` and marks it invalid.
pub fn channel_mask(x: &FeatureTensor, targets: &BTreeSet<usize>) -> Result<FeatureTensor> {
    for &c in targets {
        x.check_channel(c)?;
    }
    let mut out = x.clone();
    for &c in targets {
        out.floor_plane(c);
    }
    Ok(out)
}

/// Replaces each target plane with a copy of its donor's original plane.
pub fn channel_overwrite(x: &FeatureTensor, sel: &ChannelSelection) -> Result<FeatureTensor> {
    for &t in &sel.targets {
        x.check_channel(t)?;
        let src = *sel
            .sources
            .get(&t)
            .ok_or_else(|| Error::Config(format!("overwrite target {t} has no source")))?;
        x.check_channel(src)?;
        if sel.targets.contains(&src) {
            return Err(Error::Config(format!(
                "overwrite source {src} is itself a target"
            )));
        }
    }
    let mut out = x.clone();
    for (&t, &src) in &sel.sources {
        if sel.targets.contains(&t) {
            out.copy_plane_from(t, x, src);
        }
    }
    Ok(out)
}

/// Moves original plane `permutation[c]` into `c` for every target.
pub fn channel_swap(x: &FeatureTensor, sel: &ChannelSelection) -> Result<FeatureTensor> {
    let domain: BTreeSet<usize> = sel.permutation.keys().copied().collect();
    let image: BTreeSet<usize> = sel.permutation.values().copied().collect();
    if domain != sel.targets || image != sel.targets {
        return Err(Error::InvalidPermutation(
            "swap permutation must be a bijection on the targets".into(),
        ));
    }
    for &t in &sel.targets {
        x.check_channel(t)?;
    }
    let mut out = x.clone();
    for (&dst, &src) in &sel.permutation {
        out.copy_plane_from(dst, x, src);
    }
    Ok(out)
}

/// Fills every missing plane with a copy of a donor drawn uniformly from the
/// non-missing channels, and marks all channels valid.
pub fn random_copy<R: Rng + ?Sized>(
    x: &FeatureTensor,
    missing: &BTreeSet<usize>,
    rng: &mut R,
) -> Result<FeatureTensor> {
    for &c in missing {
        x.check_channel(c)?;
    }
    let donors: Vec<usize> = (0..x.channels()).filter(|c| !missing.contains(c)).collect();
    if donors.is_empty() {
        return Err(Error::NoDonorChannel);
    }
    let mut out = x.clone();
    for &c in missing {
        let d = donors[rng.random_range(0..donors.len())];
        out.copy_plane_from(c, x, d);
    }
    for c in 0..out.channels() {
        out.set_valid(c, true);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{Dims, LOG_FLOOR};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor(channels: usize) -> FeatureTensor {
        let dims = Dims::new(3, 4, channels);
        let data = (0..dims.len()).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        FeatureTensor::from_data(dims, data).unwrap()
    }

    #[test]
    fn zero_k_is_identity_for_every_operator() {
        let x = tensor(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [AugmentKind::Mask, AugmentKind::Overwrite, AugmentKind::Swap] {
            let policy = AugmentationPolicy::new(kind, 0, 0, 0);
            let sel = sample_selection(&policy, 4, &mut rng).unwrap();
            assert!(sel.is_empty());
            assert_eq!(apply_selection(kind, &x, &sel).unwrap(), x);
        }
    }

    #[test]
    fn target_count_never_exceeds_k_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = AugmentationPolicy::new(AugmentKind::Swap, 0, 8, 0);
        for _ in 0..2000 {
            let sel = sample_selection(&policy, 16, &mut rng).unwrap();
            assert!(sel.targets.len() <= 8);
            assert!(sel.targets.iter().all(|&c| c < 16));
        }
    }

    #[test]
    fn policy_requires_k_max_below_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = AugmentationPolicy::new(AugmentKind::Overwrite, 0, 4, 0);
        assert!(sample_selection(&policy, 4, &mut rng).is_err());
        let policy = AugmentationPolicy::new(AugmentKind::Mask, 3, 2, 0);
        assert!(sample_selection(&policy, 8, &mut rng).is_err());
    }

    #[test]
    fn overwrite_sources_are_never_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = AugmentationPolicy::new(AugmentKind::Overwrite, 1, 5, 0);
        for _ in 0..1000 {
            let sel = sample_selection(&policy, 6, &mut rng).unwrap();
            assert_eq!(sel.sources.len(), sel.targets.len());
            for (t, s) in &sel.sources {
                assert!(sel.targets.contains(t));
                assert!(!sel.targets.contains(s));
            }
        }
    }

    #[test]
    fn mask_single_channel() {
        let x = tensor(3);
        let m = channel_mask(&x, &BTreeSet::from([1])).unwrap();
        assert!(m.plane(1).iter().all(|&v| v == LOG_FLOOR));
        assert_eq!(m.channel_valid(), &[true, false, true]);
        assert_eq!(m.plane(0), x.plane(0));
        assert_eq!(m.plane(2), x.plane(2));
        assert!(channel_mask(&x, &BTreeSet::from([3])).is_err());
        assert_eq!(channel_mask(&x, &BTreeSet::new()).unwrap(), x);
    }

    #[test]
    fn overwrite_two_channels() {
        let x = tensor(2);
        let sel = ChannelSelection {
            targets: BTreeSet::from([1]),
            sources: BTreeMap::from([(1, 0)]),
            ..Default::default()
        };
        let y = channel_overwrite(&x, &sel).unwrap();
        assert_eq!(y.plane(1), x.plane(0));
        assert_eq!(y.plane(0), x.plane(0));
    }

    #[test]
    fn overwrite_rejects_target_source() {
        let x = tensor(3);
        let sel = ChannelSelection {
            targets: BTreeSet::from([0, 1]),
            sources: BTreeMap::from([(0, 1), (1, 2)]),
            ..Default::default()
        };
        assert!(channel_overwrite(&x, &sel).is_err());
    }

    #[test]
    fn swap_rejects_non_bijection() {
        let x = tensor(3);
        let sel = ChannelSelection {
            targets: BTreeSet::from([0, 1]),
            permutation: BTreeMap::from([(0, 1), (1, 1)]),
            ..Default::default()
        };
        let err = channel_swap(&x, &sel).unwrap_err();
        assert!(matches!(err, Error::InvalidPermutation(_)));
    }

    #[test]
    fn swap_transposition_is_involution() {
        let x = tensor(4);
        let sel = ChannelSelection {
            targets: BTreeSet::from([1, 3]),
            permutation: BTreeMap::from([(1, 3), (3, 1)]),
            ..Default::default()
        };
        let once = channel_swap(&x, &sel).unwrap();
        assert_eq!(once.plane(1), x.plane(3));
        assert_eq!(channel_swap(&once, &sel).unwrap(), x);
        let ident = ChannelSelection {
            targets: BTreeSet::from([0, 2]),
            permutation: BTreeMap::from([(0, 0), (2, 2)]),
            ..Default::default()
        };
        assert_eq!(channel_swap(&x, &ident).unwrap(), x);
    }

    #[test]
    fn random_copy_cases() {
        let x = tensor(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(random_copy(&x, &BTreeSet::new(), &mut rng).unwrap(), x);
        let masked = channel_mask(&x, &BTreeSet::from([1])).unwrap();
        let y = random_copy(&masked, &BTreeSet::from([1]), &mut rng).unwrap();
        assert_eq!(y.plane(1), x.plane(0));
        assert_eq!(y.channel_valid(), &[true, true]);
        let err = random_copy(&x, &BTreeSet::from([0, 1]), &mut rng).unwrap_err();
        assert!(matches!(err, Error::NoDonorChannel));
    }

    #[test]
    fn policy_none_never_touches_tensor() {
        let x = tensor(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = AugmentationPolicy::new(AugmentKind::None, 0, 8, 0);
        assert_eq!(policy.apply(&x, &mut rng).unwrap(), x);
    }

    fn arb_selection(channels: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        proptest::sample::subsequence((0..channels).collect::<Vec<_>>(), 0..=channels)
            .prop_flat_map(|targets| {
                let n = targets.len();
                (Just(targets), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
            })
    }

    proptest! {
        #[test]
        fn mask_idempotent_and_union(a in proptest::collection::btree_set(0usize..5, 0..5),
                                     b in proptest::collection::btree_set(0usize..5, 0..5)) {
            let x = tensor(5);
            let ma = channel_mask(&x, &a).unwrap();
            prop_assert_eq!(&channel_mask(&ma, &a).unwrap(), &ma);
            let union: BTreeSet<usize> = a.union(&b).copied().collect();
            prop_assert_eq!(channel_mask(&ma, &b).unwrap(), channel_mask(&x, &union).unwrap());
        }

        #[test]
        fn swap_preserves_plane_multiset((targets, order) in arb_selection(6)) {
            let x = tensor(6);
            let sel = ChannelSelection {
                targets: targets.iter().copied().collect(),
                permutation: targets.iter().zip(&order).map(|(&t, &i)| (t, targets[i])).collect(),
                ..Default::default()
            };
            let y = channel_swap(&x, &sel).unwrap();
            let key = |t: &FeatureTensor| {
                let mut planes: Vec<Vec<u64>> = (0..t.channels())
                    .map(|c| t.plane(c).iter().map(|v| v.to_bits()).collect())
                    .collect();
                planes.sort();
                planes
            };
            prop_assert_eq!(key(&x), key(&y));
            for c in (0..6).filter(|c| !sel.targets.contains(c)) {
                prop_assert_eq!(x.plane(c), y.plane(c));
            }
        }

        #[test]
        fn swap_composes_as_permutations((targets, p) in arb_selection(5), seed in any::<u64>()) {
            let x = tensor(5);
            let mut q = p.clone();
            q.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let as_sel = |perm: &[usize]| ChannelSelection {
                targets: targets.iter().copied().collect(),
                permutation: targets.iter().zip(perm).map(|(&t, &i)| (t, targets[i])).collect(),
                ..Default::default()
            };
            let (sp, sq) = (as_sel(&p), as_sel(&q));
            // applying p then q puts original plane p[q[c]] in c
            let composed = ChannelSelection {
                targets: sp.targets.clone(),
                permutation: sq.permutation.iter().map(|(&c, &m)| (c, sp.permutation[&m])).collect(),
                ..Default::default()
            };
            let two_step = channel_swap(&channel_swap(&x, &sp).unwrap(), &sq).unwrap();
            prop_assert_eq!(two_step, channel_swap(&x, &composed).unwrap());
        }

        #[test]
        fn overwrite_is_order_independent(seed in any::<u64>()) {
            let x = tensor(6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let policy = AugmentationPolicy::new(AugmentKind::Overwrite, 0, 5, 0);
            let sel = sample_selection(&policy, 6, &mut rng).unwrap();
            let y = channel_overwrite(&x, &sel).unwrap();
            // naive reference visiting targets in reverse order, reading the original
            let mut expect: Vec<Vec<f64>> = (0..6).map(|c| x.plane(c)).collect();
            for (&t, &s) in sel.sources.iter().rev() {
                expect[t] = x.plane(s);
            }
            for c in 0..6 {
                prop_assert_eq!(&y.plane(c), &expect[c]);
            }
        }

        #[test]
        fn random_copy_leaves_no_floor_plane(missing in proptest::collection::btree_set(0usize..4, 0..4), seed in any::<u64>()) {
            let x = tensor(4);
            let masked = channel_mask(&x, &missing).unwrap();
            let y = random_copy(&masked, &missing, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for c in 0..4 {
                prop_assert!(y.plane(c).iter().any(|&v| v != LOG_FLOOR));
            }
            prop_assert_eq!(y.dims(), x.dims());
        }
    }
}
