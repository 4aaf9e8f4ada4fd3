use rand::seq::SliceRandom;

use crate::rng::{self, stream};

/// Deterministic mini-batch schedule: each epoch is a fresh permutation
/// keyed by `(seed, epoch)`, cut into batches with a final partial one.
/// `batch_at(step)` is random access, so a resumed run picks up the same
/// sequence.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    n: usize,
    batch_size: usize,
    seed: u64,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(batch_size >= 1, "batch_size must be at least 1");
        BatchSchedule { n, batch_size, seed }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        let mut rng = rng::derive(self.seed, &[stream::BATCH, epoch as u64]);
        idx.shuffle(&mut rng);
        idx
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        self.permutation(epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn batch_at(&self, step: usize) -> Vec<usize> {
        let per = self.batches_per_epoch().max(1);
        let perm = self.permutation(step / per);
        let start = (step % per) * self.batch_size;
        perm[start..(start + self.batch_size).min(self.n)].to_vec()
    }
}

/// One shuffled pass over `n` examples.
pub fn batch_iter(n: usize, batch_size: usize, seed: u64) -> impl Iterator<Item = Vec<usize>> {
    BatchSchedule::new(n, batch_size, seed).epoch(0).into_iter()
}
