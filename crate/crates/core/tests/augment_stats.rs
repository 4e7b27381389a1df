mod common;

use std::collections::BTreeSet;

use mcasc::augment::{random_copy, sample_selection, AugmentKind, AugmentationPolicy};
use mcasc::harness::sample_missing_sets;
use mcasc::tensorio::{Dims, FeatureTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::chi_square_uniform_p;

fn tensor(channels: usize) -> FeatureTensor {
    let dims = Dims::new(2, 3, channels);
    // plane c holds the value c everywhere, so a copied plane names its donor
    let data = (0..dims.len()).map(|i| (i % channels) as f64).collect();
    FeatureTensor::from_data(dims, data).unwrap()
}

#[test]
fn target_count_is_uniform_over_range() {
    let policy = AugmentationPolicy::new(AugmentKind::Mask, 0, 8, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut counts = [0u64; 9];
    for _ in 0..100_000 {
        counts[sample_selection(&policy, 16, &mut rng).unwrap().targets.len()] += 1;
    }
    let p = chi_square_uniform_p(&counts);
    assert!(p > 0.01, "counts {counts:?}, p = {p}");
}

#[test]
fn targets_are_uniform_over_channels() {
    let policy = AugmentationPolicy::new(AugmentKind::Swap, 3, 3, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut counts = [0u64; 8];
    for _ in 0..20_000 {
        for t in sample_selection(&policy, 8, &mut rng).unwrap().targets {
            counts[t] += 1;
        }
    }
    assert!(chi_square_uniform_p(&counts) > 0.01, "{counts:?}");
}

#[test]
fn overwrite_donors_are_uniform_over_non_targets() {
    let policy = AugmentationPolicy::new(AugmentKind::Overwrite, 1, 1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut counts = [0u64; 5];
    for _ in 0..20_000 {
        let sel = sample_selection(&policy, 6, &mut rng).unwrap();
        let (&t, &s) = sel.sources.iter().next().unwrap();
        // donor rank among the non-target channels
        let rank = (0..6).filter(|&c| c != t && c < s).count();
        counts[rank] += 1;
    }
    assert!(chi_square_uniform_p(&counts) > 0.01, "{counts:?}");
}

#[test]
fn swap_permutations_are_uniform() {
    let policy = AugmentationPolicy::new(AugmentKind::Swap, 3, 3, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..12_000 {
        let sel = sample_selection(&policy, 3, &mut rng);
        // k_max must stay below the channel count
        assert!(sel.is_err());
        let sel = sample_selection(&policy, 4, &mut rng).unwrap();
        let targets: Vec<usize> = sel.targets.iter().copied().collect();
        let image: Vec<usize> = targets.iter().map(|t| sel.permutation[t]).collect();
        let ranks: Vec<usize> = image.iter().map(|s| targets.iter().position(|t| t == s).unwrap()).collect();
        *counts.entry(ranks).or_insert(0u64) += 1;
    }
    assert_eq!(counts.len(), 6);
    let v: Vec<u64> = counts.values().copied().collect();
    assert!(chi_square_uniform_p(&v) > 0.01, "{v:?}");
}

#[test]
fn random_copy_donors_are_uniform() {
    let x = tensor(6);
    let missing: BTreeSet<usize> = [1, 4].into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut counts = [0u64; 6];
    for _ in 0..10_000 {
        let y = random_copy(&x, &missing, &mut rng).unwrap();
        counts[y.get(0, 0, 1) as usize] += 1;
    }
    assert_eq!((counts[1], counts[4]), (0, 0));
    let donors = [counts[0], counts[2], counts[3], counts[5]];
    assert!(chi_square_uniform_p(&donors) > 0.01, "{counts:?}");
}

#[test]
fn missing_sets_are_uniform_over_subsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..20_000 {
        let set = sample_missing_sets(5, 2, 1, &mut rng).unwrap().remove(0);
        *counts.entry(set.into_iter().collect::<Vec<_>>()).or_insert(0u64) += 1;
    }
    assert_eq!(counts.len(), 10);
    let v: Vec<u64> = counts.values().copied().collect();
    assert!(chi_square_uniform_p(&v) > 0.01, "{v:?}");

    // distinct draws within one cell are still uniform marginally
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut first = std::collections::BTreeMap::new();
    for _ in 0..20_000 {
        let sets = sample_missing_sets(5, 2, 4, &mut rng).unwrap();
        assert_eq!(sets.iter().collect::<BTreeSet<_>>().len(), 4);
        *first.entry(sets[3].iter().copied().collect::<Vec<_>>()).or_insert(0u64) += 1;
    }
    let v: Vec<u64> = first.values().copied().collect();
    assert!(chi_square_uniform_p(&v) > 0.01, "{v:?}");
}
