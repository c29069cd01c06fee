use rand::Rng;

use crate::diffcore::Tensor;
use crate::envs::{preprocess, EpisodeRecord};
use crate::error::{Error, Result};
use crate::objectives::SeqBatch;

/// Append-only store of collected episodes.
#[derive(Clone, Debug, Default)]
pub struct ReplayDataset {
    episodes: Vec<EpisodeRecord>,
}

impl ReplayDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ep: EpisodeRecord) -> Result<()> {
        ep.validate()?;
        if let Some(first) = self.episodes.first() {
            if (first.image_size, first.channels, first.action_dim) != (ep.image_size, ep.channels, ep.action_dim) {
                return Err(Error::dim("episode shapes differ from the rest of the dataset"));
            }
        }
        self.episodes.push(ep);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    /// Number of chunks a single episode offers: start frames `1..=steps − L + 1`
    /// (frame 0 has no preceding action).
    fn chunks_in(ep: &EpisodeRecord, len: usize) -> usize {
        (ep.steps() + 1).saturating_sub(len)
    }

    pub fn chunk_count(&self, len: usize) -> usize {
        self.episodes.iter().map(|e| Self::chunks_in(e, len)).sum()
    }

    /// `(episode, start frame)` pairs drawn uniformly from all valid pairs.
    pub fn sample_chunk_indices(&self, batch: usize, len: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
        if len == 0 {
            return Err(Error::config("chunk length must be positive"));
        }
        let total = self.chunk_count(len);
        if total == 0 {
            return Err(Error::InsufficientData(format!("no episode has {len} steps")));
        }
        Ok((0..batch)
            .map(|_| {
                let mut u = rng.random_range(0..total);
                for (i, ep) in self.episodes.iter().enumerate() {
                    let n = Self::chunks_in(ep, len);
                    if u < n {
                        return (i, u + 1);
                    }
                    u -= n;
                }
                unreachable!("index within total")
            })
            .collect())
    }

    /// Builds a time-major batch. Row `t` of a chunk starting at frame `f`
    /// holds frame `f + t`, the action that produced it and the reward
    /// received on arrival.
    pub fn batch(&self, indices: &[(usize, usize)], len: usize) -> Result<SeqBatch<f32>> {
        let first = self.episodes.first().ok_or_else(|| Error::InsufficientData("empty dataset".into()))?;
        let (b, a) = (indices.len(), first.action_dim);
        let (size, ch) = (first.image_size, first.channels);
        let mut obs = Vec::with_capacity(len * b * first.frame_len());
        let mut actions = Vec::with_capacity(len * b * a);
        let mut rewards = Vec::with_capacity(len * b);
        for t in 0..len {
            for &(e, start) in indices {
                let ep = self
                    .episodes
                    .get(e)
                    .ok_or_else(|| Error::OutOfRange(format!("episode index {e}")))?;
                let f = start + t;
                if start == 0 || f > ep.steps() {
                    return Err(Error::OutOfRange(format!("chunk at frame {start} of episode {e}")));
                }
                obs.extend(preprocess::<f32>(ep.frame(f)));
                actions.extend_from_slice(ep.action(f - 1));
                rewards.push(ep.rewards[f - 1]);
            }
        }
        SeqBatch::new(
            Tensor::new(&[len * b, size, size, ch], obs)?,
            Tensor::new(&[len * b, a], actions)?,
            Tensor::new(&[len * b, 1], rewards)?,
            len,
            b,
        )
    }

    pub fn sample_chunks(&self, batch: usize, len: usize, rng: &mut impl Rng) -> Result<SeqBatch<f32>> {
        let idx = self.sample_chunk_indices(batch, len, rng)?;
        self.batch(&idx, len)
    }
}
