//! Bounded FIFO replay buffer and n-step window extraction.

use std::cell::Cell;
use std::collections::VecDeque;

use rand::Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::features::TaskVector;
use crate::gridworld::{Action, Observation};

thread_local! {
    static EXTRINSIC_READS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`Transition::extrinsic_reward`] calls made on this thread.
pub fn extrinsic_reads() -> u64 {
    EXTRINSIC_READS.with(Cell::get)
}

pub fn reset_extrinsic_reads() {
    EXTRINSIC_READS.with(|c| c.set(0));
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub next_obs: Observation,
    extrinsic_reward: f64,
    pub done: bool,
    /// Task vector active when the transition was collected.
    pub w: TaskVector,
    pub episode: u64,
    /// Increments whenever `w` is resampled; windows never cross a segment change.
    pub segment: u64,
    pub step_index: u64,
}

impl Transition {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        obs: Observation,
        action: usize,
        next_obs: Observation,
        extrinsic_reward: f64,
        done: bool,
        w: TaskVector,
        episode: u64,
        segment: u64,
        step_index: u64,
    ) -> Result<Self> {
        if action >= Action::COUNT {
            return Err(Error::InvalidArgument(format!("action {action} out of range")));
        }
        if (w.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "transition task vector has norm {}",
                w.norm()
            )));
        }
        Ok(Self {
            obs,
            action,
            next_obs,
            extrinsic_reward,
            done,
            w,
            episode,
            segment,
            step_index,
        })
    }

    /// Environment reward. Every call is counted, see [`extrinsic_reads`].
    pub fn extrinsic_reward(&self) -> f64 {
        EXTRINSIC_READS.with(|c| c.set(c.get() + 1));
        self.extrinsic_reward
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.obs.pack());
        enc.put_u8(self.action as u8);
        enc.put_u64(self.next_obs.pack());
        enc.put_f64(self.extrinsic_reward);
        enc.put_bool(self.done);
        enc.put_f64s(self.w.as_slice());
        enc.put_u64(self.episode);
        enc.put_u64(self.segment);
        enc.put_u64(self.step_index);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        Ok(Self {
            obs: Observation::unpack(dec.u64()?),
            action: dec.u8()? as usize,
            next_obs: Observation::unpack(dec.u64()?),
            extrinsic_reward: dec.f64()?,
            done: dec.bool()?,
            w: TaskVector::from_raw(dec.f64s()?),
            episode: dec.u64()?,
            segment: dec.u64()?,
            step_index: dec.u64()?,
        })
    }
}

/// A contiguous run of transitions starting at a sampled index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    /// False when the last transition ended its episode.
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    min_fill: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, min_fill: usize) -> Result<Self> {
        if capacity == 0 || min_fill == 0 || min_fill > capacity {
            return Err(Error::InvalidArgument(format!(
                "replay capacity {capacity} and minimum fill {min_fill} are inconsistent"
            )));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            min_fill,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn min_fill(&self) -> usize {
        self.min_fill
    }

    pub fn can_sample(&self) -> bool {
        self.items.len() >= self.min_fill
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Result<Vec<usize>> {
        if !self.can_sample() {
            return Err(Error::ReplayUnderfilled {
                len: self.items.len(),
                min: self.min_fill,
            });
        }
        Ok((0..size).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    /// Up to `n` transitions from `start`, stopping after a terminal transition,
    /// before an episode or segment change, or at the newest transition.
    pub fn window(&self, start: usize, n: usize) -> Window {
        let first = &self.items[start];
        let mut len = 1;
        let mut last = first;
        while len < n && !last.done {
            let Some(next) = self.items.get(start + len) else {
                break;
            };
            if next.episode != first.episode || next.segment != first.segment {
                break;
            }
            last = next;
            len += 1;
        }
        Window {
            start,
            len,
            bootstrap: !last.done,
        }
    }

    pub(crate) fn encode(&self, enc: &mut Encoder) {
        enc.put_usize(self.capacity);
        enc.put_usize(self.min_fill);
        enc.put_usize(self.items.len());
        for t in &self.items {
            t.encode(enc);
        }
    }

    pub(crate) fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let capacity = dec.usize()?;
        let min_fill = dec.usize()?;
        let mut buf = Self::new(capacity, min_fill)?;
        let n = dec.usize()?;
        if n > capacity {
            return Err(Error::Format(format!("replay holds {n} > capacity {capacity}")));
        }
        for _ in 0..n {
            buf.items.push_back(Transition::decode(dec)?);
        }
        Ok(buf)
    }
}
