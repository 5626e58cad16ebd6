//! Samples, age bookkeeping, batching, CSV manifests and the synthetic toy
//! corpus.

mod manifest;
pub mod toy;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::networks::AgeCondition;

pub use manifest::{load_manifest, write_manifest, SampleDescriptor};

/// One image with its dense identity index and age in years.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: ImageTensor,
    pub identity: usize,
    pub age: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub age_min: f64,
    pub age_max: f64,
    pub identity_count: usize,
    pub sample_count: usize,
}

impl DatasetStats {
    /// Age range of the MORPH corpus (16 to 77 years).
    pub fn morph(identity_count: usize, sample_count: usize) -> Self {
        Self { age_min: 16.0, age_max: 77.0, identity_count, sample_count }
    }

    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        Self::from_labels(samples.iter().map(|s| (s.identity, s.age)))
    }

    pub(crate) fn from_labels(labels: impl Iterator<Item = (usize, f64)>) -> Result<Self> {
        let mut age_min = f64::INFINITY;
        let mut age_max = f64::NEG_INFINITY;
        let mut ids = 0;
        let mut n = 0;
        for (id, age) in labels {
            age_min = age_min.min(age);
            age_max = age_max.max(age);
            ids = ids.max(id + 1);
            n += 1;
        }
        let stats = Self { age_min, age_max, identity_count: ids, sample_count: n };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::EmptyTestSet);
        }
        if !(self.age_min < self.age_max) {
            return Err(Error::InvalidConfig(format!(
                "dataset age range [{}, {}] is empty; at least two distinct ages are needed",
                self.age_min, self.age_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, age: f64) -> bool {
        age >= self.age_min && age <= self.age_max
    }

    fn check(&self, age: f64) -> Result<()> {
        if self.contains(age) {
            Ok(())
        } else {
            Err(Error::OutOfRangeAge { age, min: self.age_min, max: self.age_max })
        }
    }

    pub fn condition(&self, age: f64) -> Result<AgeCondition> {
        Ok(AgeCondition { chronological: age, normalized: normalize_age(age, self)? })
    }
}

/// Linear map of `[age_min, age_max]` onto `[-1, 1]`.
pub fn normalize_age(age: f64, stats: &DatasetStats) -> Result<f64> {
    stats.check(age)?;
    Ok(2.0 * (age - stats.age_min) / (stats.age_max - stats.age_min) - 1.0)
}

/// Inverse of [`normalize_age`]; not range-checked.
pub fn denormalize_age(normalized: f64, stats: &DatasetStats) -> f64 {
    stats.age_min + (normalized + 1.0) * 0.5 * (stats.age_max - stats.age_min)
}

/// A target age drawn uniformly over the dataset range.
pub fn sample_target_age<R: Rng>(rng: &mut R, stats: &DatasetStats) -> AgeCondition {
    let u: f64 = rng.random();
    let chronological = stats.age_min + u * (stats.age_max - stats.age_min);
    AgeCondition { chronological, normalized: 2.0 * u - 1.0 }
}

/// Deterministic epoch plans over `len` samples. The final partial batch of
/// every epoch is dropped.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(Self { len, batch_size, seed, shuffle })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len / self.batch_size
    }

    /// The sample order of `epoch`, identical for identical `(seed, epoch)`.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            order.shuffle(&mut rng);
        }
        order.chunks_exact(self.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Batch number `step` counting across epochs.
    pub fn batch_at(&self, step: u64) -> Option<Vec<usize>> {
        let per = self.batches_per_epoch() as u64;
        if per == 0 {
            return None;
        }
        let mut plan = self.epoch(step / per);
        Some(plan.swap_remove((step % per) as usize))
    }
}

/// Shuffled split into `(train, test)` with `train_fraction` of the samples
/// (rounded down) in the first part.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((items.len() as f64) * train_fraction).floor() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    (pick(&order[..cut]), pick(&order[cut..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn morph() -> DatasetStats {
        DatasetStats::morph(10, 100)
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        assert_eq!(normalize_age(16.0, &morph()).unwrap(), -1.0);
        assert_eq!(normalize_age(77.0, &morph()).unwrap(), 1.0);
        assert!(normalize_age(46.5, &morph()).unwrap().abs() < 1e-15);
        assert!(matches!(normalize_age(80.0, &morph()), Err(Error::OutOfRangeAge { .. })));
    }

    #[test]
    fn target_ages_are_reproducible_and_in_range() {
        let s = morph();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sample_target_age(&mut rng, &s).chronological).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!(draw(9).iter().all(|a| s.contains(*a)));
    }

    #[test]
    fn target_age_mean_is_central() {
        let s = morph();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<AgeCondition> = (0..10_000).map(|_| sample_target_age(&mut rng, &s)).collect();
        let mean = draws.iter().map(|a| a.chronological).sum::<f64>() / draws.len() as f64;
        assert!((mean - 46.5).abs() < 1.0, "mean {mean}");
        for a in &draws {
            assert!((normalize_age(a.chronological, &s).unwrap() - a.normalized).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_plans() {
        let it = BatchIterator::new(35, 16, 4, true).unwrap();
        assert_eq!(it.batches_per_epoch(), 2);
        assert_eq!(it.epoch(0), it.epoch(0));
        assert_ne!(it.epoch(0), it.epoch(1));
        let ordered = BatchIterator::new(35, 16, 4, false).unwrap();
        assert_eq!(ordered.epoch(0)[0], (0..16).collect::<Vec<_>>());
        assert_eq!(ordered.epoch(0)[1], (16..32).collect::<Vec<_>>());
        assert_eq!(it.batch_at(3).unwrap(), it.epoch(1)[1]);
    }

    #[test]
    fn every_sample_once_per_epoch() {
        let it = BatchIterator::new(48, 16, 11, true).unwrap();
        let mut seen: Vec<usize> = it.epoch(5).concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..48).collect::<Vec<_>>());
    }

    #[test]
    fn ninety_ten_split() {
        let items: Vec<usize> = (0..50).collect();
        let (a, b) = split(&items, 0.9, 1);
        assert_eq!((a.len(), b.len()), (45, 5));
        let mut all = [a, b].concat();
        all.sort_unstable();
        assert_eq!(all, items);
    }
}
