use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of size-`k` subsets of `n` items, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Draws `trials` missing-channel sets, each uniform over the size-`k`
/// subsets of `0..channels`. Sets are distinct whenever there are at least
/// `trials` subsets; otherwise every subset appears before any repeats.
pub fn sample_missing_sets<R: Rng + ?Sized>(
    channels: usize,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<BTreeSet<usize>>> {
    if k > channels {
        return Err(Error::Config(format!(
            "cannot drop {k} of {channels} channels"
        )));
    }
    let available = binomial(channels, k);
    let mut out: Vec<BTreeSet<usize>> = Vec::with_capacity(trials);
    let mut seen = BTreeSet::new();
    while out.len() < trials {
        let set: BTreeSet<usize> = index::sample(rng, channels, k).into_iter().collect();
        if (seen.len() as u128) < available {
            if !seen.insert(set.clone()) {
                continue;
            }
        } else {
            seen.clear();
            seen.insert(set.clone());
        }
        out.push(set);
    }
    Ok(out)
}
