//! Joint replay storage.

use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of joint observations and actions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub obs_dims: Vec<usize>,
    pub act_dims: Vec<usize>,
}

impl Layout {
    pub fn new(obs_dims: Vec<usize>, act_dims: Vec<usize>) -> Self {
        assert_eq!(obs_dims.len(), act_dims.len());
        Self { obs_dims, act_dims }
    }

    pub fn n_agents(&self) -> usize {
        self.obs_dims.len()
    }

    pub fn obs_total(&self) -> usize {
        self.obs_dims.iter().sum()
    }

    pub fn act_total(&self) -> usize {
        self.act_dims.iter().sum()
    }

    pub fn obs_offset(&self, agent: usize) -> usize {
        self.obs_dims[..agent].iter().sum()
    }

    pub fn act_offset(&self, agent: usize) -> usize {
        self.act_dims[..agent].iter().sum()
    }

    fn row_width(&self) -> usize {
        // x, a, r, x', terminal, one provenance tag per agent
        2 * self.obs_total() + self.act_total() + 2 * self.n_agents() + 1
    }
}

/// One joint experience tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub x_next: Vec<f64>,
    pub terminal: bool,
    /// Active sub-policy index of every agent when the sample was generated.
    pub tags: Vec<usize>,
}

/// A sampled minibatch, one transition per row.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array2<f64>,
    pub x_next: Array2<f64>,
    pub terminal: Vec<bool>,
    pub tags: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn obs(&self, layout: &Layout, agent: usize) -> ArrayView2<'_, f64> {
        let o = layout.obs_offset(agent);
        self.x.slice(s![.., o..o + layout.obs_dims[agent]])
    }

    pub fn obs_next(&self, layout: &Layout, agent: usize) -> ArrayView2<'_, f64> {
        let o = layout.obs_offset(agent);
        self.x_next.slice(s![.., o..o + layout.obs_dims[agent]])
    }

    pub fn action(&self, layout: &Layout, agent: usize) -> ArrayView2<'_, f64> {
        let o = layout.act_offset(agent);
        self.actions.slice(s![.., o..o + layout.act_dims[agent]])
    }
}

/// Fixed-capacity FIFO ring with uniform sampling with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    layout: Layout,
    capacity: usize,
    width: usize,
    data: Vec<f64>,
    cursor: usize,
    len: usize,
}

const REPLAY_MAGIC: &[u8; 16] = b"mplab-replay-v1\n";

impl ReplayBuffer {
    pub fn new(layout: Layout, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        let width = layout.row_width();
        Self {
            layout,
            capacity,
            width,
            data: Vec::new(),
            cursor: 0,
            len: 0,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let l = &self.layout;
        if t.x.len() != l.obs_total() {
            return Err(Error::shape("transition observations", l.obs_total(), t.x.len()));
        }
        if t.x_next.len() != l.obs_total() {
            return Err(Error::shape("transition next observations", l.obs_total(), t.x_next.len()));
        }
        if t.actions.len() != l.n_agents() || t.rewards.len() != l.n_agents() || t.tags.len() != l.n_agents() {
            return Err(Error::shape("transition agents", l.n_agents(), t.actions.len()));
        }
        for (a, &d) in t.actions.iter().zip(&l.act_dims) {
            if a.len() != d {
                return Err(Error::shape("transition action", d, a.len()));
            }
        }
        if t.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("transition rewards".into()));
        }
        let mut row = Vec::with_capacity(self.width);
        row.extend_from_slice(&t.x);
        for a in &t.actions {
            row.extend_from_slice(a);
        }
        row.extend_from_slice(&t.rewards);
        row.extend_from_slice(&t.x_next);
        row.push(if t.terminal { 1.0 } else { 0.0 });
        row.extend(t.tags.iter().map(|&k| k as f64));
        if self.len < self.capacity {
            self.data.extend_from_slice(&row);
            self.len += 1;
        } else {
            let start = self.cursor * self.width;
            self.data[start..start + self.width].copy_from_slice(&row);
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Storage slot of the `age`-th most recent entry (0 = newest).
    fn slot_of_recent(&self, age: usize) -> usize {
        (self.cursor + self.capacity - 1 - age) % self.capacity
    }

    /// Transition in insertion order, `0` being the oldest retained entry.
    pub fn get(&self, index: usize) -> Option<Transition> {
        if index >= self.len {
            return None;
        }
        let slot = self.slot_of_recent(self.len - 1 - index);
        Some(self.decode(slot))
    }

    fn decode(&self, slot: usize) -> Transition {
        let l = &self.layout;
        let row = &self.data[slot * self.width..(slot + 1) * self.width];
        let ox = l.obs_total();
        let mut at = ox;
        let actions = l
            .act_dims
            .iter()
            .map(|&d| {
                let a = row[at..at + d].to_vec();
                at += d;
                a
            })
            .collect();
        let n = l.n_agents();
        let rewards = row[at..at + n].to_vec();
        at += n;
        let x_next = row[at..at + ox].to_vec();
        at += ox;
        let terminal = row[at] != 0.0;
        let tags = row[at + 1..at + 1 + n].iter().map(|&k| k as usize).collect();
        Transition {
            x: row[..ox].to_vec(),
            actions,
            rewards,
            x_next,
            terminal,
            tags,
        }
    }

    fn gather(&self, slots: &[usize]) -> Batch {
        let l = &self.layout;
        let (ox, oa, n) = (l.obs_total(), l.act_total(), l.n_agents());
        let b = slots.len();
        let mut x = Array2::zeros((b, ox));
        let mut actions = Array2::zeros((b, oa));
        let mut rewards = Array2::zeros((b, n));
        let mut x_next = Array2::zeros((b, ox));
        let mut terminal = Vec::with_capacity(b);
        let mut tags = Vec::with_capacity(b);
        for (r, &slot) in slots.iter().enumerate() {
            let row = &self.data[slot * self.width..(slot + 1) * self.width];
            x.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&row[..ox]);
            actions.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&row[ox..ox + oa]);
            rewards.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&row[ox + oa..ox + oa + n]);
            let at = ox + oa + n;
            x_next.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&row[at..at + ox]);
            terminal.push(row[at + ox] != 0.0);
            tags.push(row[at + ox + 1..at + ox + 1 + n].iter().map(|&k| k as usize).collect());
        }
        Batch {
            x,
            actions,
            rewards,
            x_next,
            terminal,
            tags,
        }
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if self.len == 0 {
            return Err(Error::EmptyBuffer);
        }
        let slots: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len)).collect();
        Ok(self.gather(&slots))
    }

    /// Storage slots drawn by [`ReplayBuffer::sample`], exposed for frequency checks.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.len)).collect())
    }

    /// The `n` most recent transitions, oldest first.
    pub fn latest(&self, n: usize) -> Result<Batch> {
        if self.len == 0 {
            return Err(Error::EmptyBuffer);
        }
        let n = n.min(self.len);
        let slots: Vec<usize> = (0..n).rev().map(|age| self.slot_of_recent(age)).collect();
        Ok(self.gather(&slots))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(REPLAY_MAGIC)?;
        for v in [self.capacity, self.width, self.cursor, self.len] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(layout: Layout, mut r: R) -> Result<Self> {
        let mut magic = [0u8; 16];
        r.read_exact(&mut magic)?;
        if &magic != REPLAY_MAGIC {
            return Err(Error::Checkpoint("bad replay buffer header".into()));
        }
        let mut word = [0u8; 8];
        let mut header = [0usize; 4];
        for h in &mut header {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let [capacity, width, cursor, len] = header;
        let mut buf = ReplayBuffer::new(layout, capacity.max(1));
        if width != buf.width || len > capacity || cursor >= capacity.max(1) {
            return Err(Error::Checkpoint("replay buffer layout mismatch".into()));
        }
        buf.data = Vec::with_capacity(len * width);
        for _ in 0..len * width {
            r.read_exact(&mut word)?;
            buf.data.push(f64::from_le_bytes(word));
        }
        buf.cursor = cursor;
        buf.len = len;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> Layout {
        Layout::new(vec![1, 2], vec![1, 1])
    }

    fn tr(v: f64) -> Transition {
        Transition {
            x: vec![v, v, v],
            actions: vec![vec![v], vec![-v]],
            rewards: vec![v, 2.0 * v],
            x_next: vec![v + 1.0; 3],
            terminal: v > 100.0,
            tags: vec![0, (v as usize) % 3],
        }
    }

    #[test]
    fn ring_eviction_keeps_newest() {
        let mut b = ReplayBuffer::new(layout(), 2);
        for v in [1.0, 2.0, 3.0] {
            b.push(&tr(v)).unwrap();
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).unwrap(), tr(2.0));
        assert_eq!(b.get(1).unwrap(), tr(3.0));
        let latest = b.latest(5).unwrap();
        assert_eq!(latest.x[[0, 0]], 2.0);
        assert_eq!(latest.x[[1, 0]], 3.0);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let b = ReplayBuffer::new(layout(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(3, &mut rng), Err(Error::EmptyBuffer)));
        assert!(b.latest(1).is_err());
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut b = ReplayBuffer::new(layout(), 4);
        let mut t = tr(1.0);
        t.x.pop();
        assert!(b.push(&t).is_err());
        let mut t = tr(1.0);
        t.actions[1].push(0.0);
        assert!(b.push(&t).is_err());
        let mut t = tr(1.0);
        t.rewards[0] = f64::NAN;
        assert!(b.push(&t).is_err());
    }

    #[test]
    fn batch_columns_round_trip() {
        let mut b = ReplayBuffer::new(layout(), 8);
        b.push(&tr(4.0)).unwrap();
        b.push(&tr(101.0)).unwrap();
        let batch = b.latest(2).unwrap();
        let l = layout();
        assert_eq!(batch.obs(&l, 1).row(0).to_vec(), vec![4.0, 4.0]);
        assert_eq!(batch.action(&l, 1).row(1).to_vec(), vec![-101.0]);
        assert_eq!(batch.rewards.row(0).to_vec(), vec![4.0, 8.0]);
        assert_eq!(batch.terminal, vec![false, true]);
        assert_eq!(batch.tags[1], vec![0, 2]);
    }

    #[test]
    fn serialization_round_trip() {
        let mut b = ReplayBuffer::new(layout(), 3);
        for v in 0..5 {
            b.push(&tr(v as f64 * 0.1)).unwrap();
        }
        let mut bytes = Vec::new();
        b.write_to(&mut bytes).unwrap();
        let c = ReplayBuffer::read_from(layout(), bytes.as_slice()).unwrap();
        assert_eq!(b, c);
    }

    proptest! {
        #[test]
        fn ring_invariants(capacity in 1usize..20, pushes in 0usize..60, seed in 0u64..1000) {
            let mut b = ReplayBuffer::new(layout(), capacity);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in 0..pushes {
                b.push(&tr(v as f64)).unwrap();
                prop_assert!(b.len() <= capacity);
                prop_assert_eq!(b.len(), (v + 1).min(capacity));
                let oldest = (v + 1).saturating_sub(capacity);
                prop_assert_eq!(b.get(0).unwrap().x[0], oldest as f64);
                let batch = b.sample(7, &mut rng).unwrap();
                for r in 0..batch.len() {
                    let value = batch.x[[r, 0]] as usize;
                    prop_assert!(value >= oldest && value <= v);
                }
            }
        }
    }
}
