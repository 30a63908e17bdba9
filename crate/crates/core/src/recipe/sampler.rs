//! Class-balanced sampling and the batch feed.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Draws an item by first picking a class uniformly among the classes
/// present, then an item uniformly within that class.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    buckets: Vec<(usize, Vec<usize>)>,
}

impl BalancedSampler {
    pub fn new(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("cannot sample from an empty dataset".into()));
        }
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in labels.iter().enumerate() {
            by_class.entry(y).or_default().push(i);
        }
        Ok(Self {
            buckets: by_class.into_iter().collect(),
        })
    }

    pub fn classes(&self) -> Vec<usize> {
        self.buckets.iter().map(|(c, _)| *c).collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let (_, items) = &self.buckets[rng.gen_range(0..self.buckets.len())];
        items[rng.gen_range(0..items.len())]
    }

    pub fn sample_batch(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..batch_size).map(|_| self.sample(rng)).collect()
    }
}

/// Class-balanced batch of references into `items`.
pub fn sample_batch<'a, T>(
    items: &'a [T],
    label: impl Fn(&T) -> usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<&'a T>> {
    let labels: Vec<usize> = items.iter().map(label).collect();
    let sampler = BalancedSampler::new(&labels)?;
    Ok(sampler
        .sample_batch(batch_size, rng)
        .into_iter()
        .map(|i| &items[i])
        .collect())
}

/// Seeded sequence of `count` index batches.
///
/// With `prefetch`, a producer thread fills a bounded queue ahead of the
/// consumer. The sequence depends only on the seed, so both paths yield the
/// same batches in the same order.
pub fn batch_feed(
    sampler: BalancedSampler,
    count: usize,
    batch_size: usize,
    seed: u64,
    prefetch: bool,
) -> Box<dyn Iterator<Item = Vec<usize>> + Send> {
    if prefetch {
        let (tx, rx) = mpsc::sync_channel(16);
        thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                if tx.send(sampler.sample_batch(batch_size, &mut rng)).is_err() {
                    break;
                }
            }
        });
        Box::new(rx.into_iter())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Box::new((0..count).map(move |_| sampler.sample_batch(batch_size, &mut rng)))
    }
}
