use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, Split};
use crate::error::{Error, Result};

/// Default validation share.
pub const DEFAULT_VAL_FRACTION: f64 = 0.25;

/// Validation count for a class of `class_count` samples: `class_count ×
/// fraction` rounded half-up, then clamped to `[1, class_count − 1]` so that
/// neither side of the split is empty.
pub fn stratum_val_count(class_count: usize, val_fraction: f64) -> usize {
    // Products that are a half-integer up to float error count as ties.
    let raw = (class_count as f64 * val_fraction + 0.5 + 1e-9).floor() as usize;
    raw.clamp(1, class_count.saturating_sub(1).max(1))
}

/// Stratified, seeded train/validation split.
///
/// Within each class (taken in registry order) the sample indices are
/// shuffled by a single ChaCha8 stream seeded with `seed`; the first
/// [`stratum_val_count`] go to validation. Every class needs at least two
/// samples.
pub fn make_split(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let k = manifest.registry().len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, s) in manifest.samples().iter().enumerate() {
        by_class[s.label.id()].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            let name = manifest.registry().get(c).map(|l| l.name()).unwrap_or("?");
            return Err(Error::Split(format!(
                "class {name:?} has {} sample(s); at least 2 are needed",
                members.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Some(Split::Train); manifest.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let n_val = stratum_val_count(members.len(), val_fraction);
        for &i in &members[..n_val] {
            splits[i] = Some(Split::Val);
        }
    }
    Ok(manifest.assign(splits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::manifest_with_counts;

    #[test]
    fn exact_quarter_split() {
        let m = manifest_with_counts(&[4, 4]);
        for seed in [0, 1, 99] {
            let s = make_split(&m, 0.25, seed).unwrap();
            let val = s.indices(Split::Val);
            assert_eq!(val.len(), 2);
            assert_eq!(val.iter().filter(|&&i| i < 4).count(), 1);
        }
    }

    #[test]
    fn same_seed_same_assignment() {
        let m = manifest_with_counts(&[10, 7, 12]);
        assert_eq!(make_split(&m, 0.3, 5).unwrap(), make_split(&m, 0.3, 5).unwrap());
    }

    #[test]
    fn different_seeds_usually_differ() {
        let m = manifest_with_counts(&[40, 40]);
        assert_ne!(
            make_split(&m, 0.25, 1).unwrap().indices(Split::Val),
            make_split(&m, 0.25, 2).unwrap().indices(Split::Val)
        );
    }

    #[test]
    fn rejects_singleton_class() {
        let m = manifest_with_counts(&[4, 1]);
        assert!(matches!(make_split(&m, 0.25, 0), Err(Error::Split(_))));
        let m = manifest_with_counts(&[4, 0]);
        assert!(matches!(make_split(&m, 0.25, 0), Err(Error::Split(_))));
    }

    #[test]
    fn rejects_fraction_outside_open_interval() {
        let m = manifest_with_counts(&[4, 4]);
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(make_split(&m, f, 0), Err(Error::Config(_))), "{f}");
        }
    }

    #[test]
    fn rounding_is_half_up_and_clamped() {
        assert_eq!(stratum_val_count(54, 0.25), 14); // 13.5
        assert_eq!(stratum_val_count(52, 0.25), 13);
        assert_eq!(stratum_val_count(2, 0.01), 1);
        assert_eq!(stratum_val_count(2, 0.99), 1);
        assert_eq!(stratum_val_count(10, 0.95), 9);
        assert_eq!(stratum_val_count(5, 0.3), 2); // 1.5 despite 0.3 not being exact
    }
}
