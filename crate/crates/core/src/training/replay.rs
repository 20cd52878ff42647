//! Sharded proportional prioritized replay with oldest-first eviction.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use super::nstep::ReplayEntry;

/// Smallest priority an entry can hold.
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("replay buffer is empty")]
    Empty,
    #[error("replay capacity and shard count must be positive")]
    Config,
}

/// Stable handle of a stored entry: shard and insertion sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EntryId {
    pub shard: usize,
    pub seq: u64,
}

#[derive(Debug)]
struct Shard {
    entries: VecDeque<(ReplayEntry, f64)>,
    front_seq: u64,
    capacity: usize,
}

impl Shard {
    fn index(&self, seq: u64) -> Option<usize> {
        let i = seq.checked_sub(self.front_seq)? as usize;
        (i < self.entries.len()).then_some(i)
    }
}

#[derive(Debug)]
pub struct ReplayBuffer {
    shards: Vec<Shard>,
    alpha: f64,
    beta: f64,
    max_priority: f64,
    next_shard: usize,
}

#[derive(Debug)]
pub struct SampledBatch<'a> {
    pub ids: Vec<EntryId>,
    pub entries: Vec<&'a ReplayEntry>,
    /// Importance weights, largest possible weight normalized to 1.
    pub weights: Vec<f64>,
}

impl ReplayBuffer {
    /// `capacity` is split evenly over `shards` (remainder to the first ones).
    pub fn new(capacity: usize, shards: usize, alpha: f64, beta: f64) -> Result<ReplayBuffer, ReplayError> {
        if capacity == 0 || shards == 0 || shards > capacity {
            return Err(ReplayError::Config);
        }
        let shards = (0..shards)
            .map(|i| Shard {
                entries: VecDeque::new(),
                front_seq: 0,
                capacity: capacity / shards + usize::from(i < capacity % shards),
            })
            .collect();
        Ok(ReplayBuffer {
            shards,
            alpha,
            beta,
            max_priority: 1.0,
            next_shard: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(|s| s.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.shards.iter().map(|s| s.capacity).sum()
    }

    /// Stores with the largest priority seen so far; shards take turns.
    pub fn push(&mut self, entry: ReplayEntry) -> EntryId {
        let p = self.max_priority;
        self.push_with_priority(entry, p)
    }

    pub fn push_with_priority(&mut self, entry: ReplayEntry, priority: f64) -> EntryId {
        let shard_idx = self.next_shard;
        self.next_shard = (self.next_shard + 1) % self.shards.len();
        let priority = priority.max(PRIORITY_FLOOR);
        self.max_priority = self.max_priority.max(priority);
        let shard = &mut self.shards[shard_idx];
        if shard.entries.len() == shard.capacity {
            shard.entries.pop_front();
            shard.front_seq += 1;
        }
        shard.entries.push_back((entry, priority));
        EntryId {
            shard: shard_idx,
            seq: shard.front_seq + shard.entries.len() as u64 - 1,
        }
    }

    pub fn priority(&self, id: EntryId) -> Option<f64> {
        let s = self.shards.get(id.shard)?;
        s.index(id.seq).map(|i| s.entries[i].1)
    }

    /// Updates priorities of entries still stored; evicted ids are skipped.
    pub fn update_priorities(&mut self, ids: &[EntryId], priorities: &[f64]) {
        for (id, &p) in ids.iter().zip(priorities) {
            let p = p.max(PRIORITY_FLOOR);
            if let Some(s) = self.shards.get_mut(id.shard) {
                if let Some(i) = s.index(id.seq) {
                    s.entries[i].1 = p;
                    self.max_priority = self.max_priority.max(p);
                }
            }
        }
    }

    /// Draws `batch` entries with probability `p^alpha / sum p^alpha`: a
    /// shard is picked by its share of the mass, then an entry within it.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<SampledBatch<'_>, ReplayError> {
        let total_len = self.len();
        if total_len == 0 {
            return Err(ReplayError::Empty);
        }
        let prefix: Vec<Vec<f64>> = self
            .shards
            .iter()
            .map(|s| {
                let mut acc = 0.0;
                s.entries
                    .iter()
                    .map(|(_, p)| {
                        acc += p.powf(self.alpha);
                        acc
                    })
                    .collect()
            })
            .collect();
        let masses: Vec<f64> = prefix.iter().map(|p| p.last().copied().unwrap_or(0.0)).collect();
        let total: f64 = masses.iter().sum();
        let min_p = self
            .shards
            .iter()
            .flat_map(|s| s.entries.iter().map(|(_, p)| p.powf(self.alpha)))
            .fold(f64::INFINITY, f64::min)
            / total;
        let max_w = (total_len as f64 * min_p).powf(-self.beta);

        let mut out = SampledBatch {
            ids: Vec::with_capacity(batch),
            entries: Vec::with_capacity(batch),
            weights: Vec::with_capacity(batch),
        };
        for _ in 0..batch {
            let shard = pick(&cumulative(&masses), rng.gen::<f64>() * total);
            let within = &prefix[shard];
            let i = pick(within, rng.gen::<f64>() * masses[shard]);
            let s = &self.shards[shard];
            let prob = s.entries[i].1.powf(self.alpha) / total;
            out.ids.push(EntryId {
                shard,
                seq: s.front_seq + i as u64,
            });
            out.entries.push(&s.entries[i].0);
            out.weights.push((total_len as f64 * prob).powf(-self.beta) / max_w);
        }
        Ok(out)
    }
}

fn cumulative(xs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    xs.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

// First index whose running sum exceeds `u`, skipping zero-mass tails.
fn pick(prefix: &[f64], u: f64) -> usize {
    let i = prefix.partition_point(|&c| c <= u);
    i.min(prefix.len() - 1)
}
