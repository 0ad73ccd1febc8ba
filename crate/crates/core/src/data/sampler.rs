use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, SamplePair};
use crate::error::{Error, Result};

/// Resumable position of a [`BatchSampler`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: u64,
}

/// Draws indices without replacement within an epoch; each epoch is a fresh
/// permutation derived only from `(seed, epoch)`.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    state: SamplerState,
    order: Vec<usize>,
}

fn permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

pub fn batches_per_epoch(len: usize, batch: usize) -> usize {
    len.div_ceil(batch)
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        Self::from_state(
            len,
            SamplerState {
                seed,
                epoch: 0,
                cursor: 0,
            },
        )
    }

    pub fn from_state(len: usize, state: SamplerState) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("cannot sample from an empty dataset".into()));
        }
        if state.cursor as usize > len {
            return Err(Error::Config(format!("sampler cursor {} past {len} records", state.cursor)));
        }
        Ok(Self {
            len,
            state,
            order: permutation(state.seed, state.epoch, len),
        })
    }

    pub fn state(&self) -> SamplerState {
        self.state
    }

    fn advance_epoch(&mut self) {
        self.state.epoch += 1;
        self.state.cursor = 0;
        self.order = permutation(self.state.seed, self.state.epoch, self.len);
    }

    /// Next batch of indices. A batch never straddles an epoch boundary
    /// unless `n` exceeds the dataset size, so the final batch of an epoch
    /// may be short.
    pub fn next_indices(&mut self, n: usize) -> Vec<usize> {
        if self.state.cursor as usize == self.len {
            self.advance_epoch();
        }
        if n <= self.len {
            let start = self.state.cursor as usize;
            let end = (start + n).min(self.len);
            self.state.cursor = end as u64;
            return self.order[start..end].to_vec();
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.state.cursor as usize == self.len {
                self.advance_epoch();
            }
            let start = self.state.cursor as usize;
            let end = (start + n - out.len()).min(self.len);
            out.extend_from_slice(&self.order[start..end]);
            self.state.cursor = end as u64;
        }
        out
    }

    pub fn next_batch(&mut self, dataset: &Dataset, n: usize) -> Result<Vec<SamplePair>> {
        let idx = self.next_indices(n);
        dataset.samples(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = BatchSampler::new(50, 7).unwrap();
        let mut b = BatchSampler::new(50, 7).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_indices(16), b.next_indices(16));
        }
        let mut c = BatchSampler::new(50, 8).unwrap();
        let mut a = BatchSampler::new(50, 7).unwrap();
        assert_ne!(a.next_indices(50), c.next_indices(50));
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let mut s = BatchSampler::new(33, 1).unwrap();
        let mut idx = s.next_indices(33);
        idx.sort_unstable();
        assert_eq!(idx, (0..33).collect::<Vec<_>>());
        let next = s.next_indices(33);
        assert_eq!(s.state().epoch, 1);
        assert_eq!(next.len(), 33);
    }

    #[test]
    fn five_thousand_patches_in_batches_of_sixteen() {
        let mut s = BatchSampler::new(5000, 3).unwrap();
        let mut batches = 0;
        let mut seen = vec![false; 5000];
        while s.state().epoch == 0 {
            let idx = s.next_indices(16);
            for i in idx {
                assert!(!seen[i]);
                seen[i] = true;
            }
            batches += 1;
            if s.state().cursor == 5000 {
                break;
            }
        }
        assert_eq!(batches, 313);
        assert_eq!(batches_per_epoch(5000, 16), 313);
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn oversized_batch_wraps_with_reshuffle() {
        let mut s = BatchSampler::new(5, 2).unwrap();
        let idx = s.next_indices(12);
        assert_eq!(idx.len(), 12);
        let mut first: Vec<usize> = idx[..5].to_vec();
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.state().epoch, 2);
    }

    #[test]
    fn resumes_from_state() {
        let mut a = BatchSampler::new(20, 11).unwrap();
        a.next_indices(7);
        a.next_indices(7);
        let mut b = BatchSampler::from_state(20, a.state()).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_indices(7), b.next_indices(7));
        }
    }
}
