//! Uniform experience replay with contiguous per-episode sequence sampling.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("replay buffer not ready: {0}")]
    NotReady(String),
    #[error("episode id {pushed} is older than the newest stored episode {newest}")]
    EpisodeOrder { pushed: u64, newest: u64 },
}

/// Ring buffer of items tagged with the episode they belong to.
///
/// Episode ids must be non-decreasing in insertion order. A run-length list
/// of `(episode, count)` mirrors the ring so that sequence sampling knows
/// every episode's extent after evictions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
    episodes: VecDeque<(u64, usize)>,
    inserted: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            episodes: VecDeque::new(),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total pushes over the buffer's lifetime.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, index: usize) -> Option<&T> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `(episode id, stored length)` for every episode still in the buffer.
    pub fn episode_lengths(&self) -> impl Iterator<Item = (u64, usize)> + '_ {
        self.episodes.iter().copied()
    }

    /// Episode id of the item at `index`.
    pub fn episode_of(&self, index: usize) -> Option<u64> {
        let mut offset = 0;
        for &(id, count) in &self.episodes {
            if index < offset + count {
                return Some(id);
            }
            offset += count;
        }
        None
    }

    pub fn push(&mut self, item: T, episode: u64) -> Result<(), ReplayError> {
        match self.episodes.back_mut() {
            Some(&mut (newest, _)) if episode < newest => {
                return Err(ReplayError::EpisodeOrder {
                    pushed: episode,
                    newest,
                })
            }
            Some((newest, count)) if *newest == episode => *count += 1,
            _ => self.episodes.push_back((episode, 1)),
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
            let front = self
                .episodes
                .front_mut()
                .expect("a stored item has an episode");
            front.1 -= 1;
            if front.1 == 0 {
                self.episodes.pop_front();
            }
        }
        self.items.push_back(item);
        self.inserted += 1;
        Ok(())
    }

    /// Indices drawn i.i.d. uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.items.len() < batch || self.items.is_empty() {
            return Err(ReplayError::NotReady(format!(
                "{} stored, {} needed",
                self.items.len(),
                batch.max(1)
            )));
        }
        Ok((0..batch)
            .map(|_| rng.gen_range(0..self.items.len()))
            .collect())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<&T>, ReplayError> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// Start indices of `batch` windows of `seq_len` consecutive items, each
    /// inside a single episode, uniform over every valid start offset.
    pub fn sample_sequence_starts<R: Rng + ?Sized>(
        &self,
        batch: usize,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        assert!(seq_len > 0, "sequence length must be positive");
        // (first item index, valid starts) per episode long enough.
        let mut spans = Vec::new();
        let mut cumulative = Vec::new();
        let mut offset = 0;
        let mut total = 0usize;
        for &(_, count) in &self.episodes {
            if count >= seq_len {
                let starts = count - seq_len + 1;
                spans.push(offset);
                total += starts;
                cumulative.push(total);
            }
            offset += count;
        }
        if total == 0 {
            return Err(ReplayError::NotReady(format!(
                "no stored episode has {seq_len} transitions"
            )));
        }
        Ok((0..batch)
            .map(|_| {
                let k = rng.gen_range(0..total);
                let e = cumulative.partition_point(|&c| c <= k);
                let before = if e == 0 { 0 } else { cumulative[e - 1] };
                spans[e] + (k - before)
            })
            .collect())
    }

    pub fn sample_sequences<R: Rng + ?Sized>(
        &self,
        batch: usize,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<&T>>, ReplayError> {
        Ok(self
            .sample_sequence_starts(batch, seq_len, rng)?
            .into_iter()
            .map(|s| self.items.range(s..s + seq_len).collect())
            .collect())
    }
}
