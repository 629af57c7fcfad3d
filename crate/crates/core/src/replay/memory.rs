use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ReplayError;
use crate::envs::StackedState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Agent,
    Human,
}

/// One `(s, a, r, s')` tuple. `reward` is already clipped when clipping is on.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StackedState,
    pub action: usize,
    pub reward: f64,
    pub next_state: StackedState,
    pub terminal: bool,
    pub source: Source,
}

impl Transition {
    /// Whether `next_state` is `state` shifted by one observation.
    pub fn is_consistent(&self) -> bool {
        if self.terminal {
            return true;
        }
        let (s, n) = (self.state.frames(), self.next_state.frames());
        s.len() == n.len() && s[1..] == n[..n.len() - 1]
    }
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    name: &'static str,
    capacity: usize,
    buffer: Vec<Transition>,
    write_index: usize,
    input_shape: Option<[usize; 3]>,
    read_only: bool,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            name: "agent",
            capacity,
            buffer: Vec::new(),
            write_index: 0,
            input_shape: None,
            read_only: false,
        })
    }

    /// A read-only memory holding exactly `transitions`; nothing is ever evicted.
    pub fn frozen(transitions: Vec<Transition>) -> Result<Self, ReplayError> {
        let mut memory = Self::new(transitions.len().max(1))?;
        memory.name = "human";
        for t in transitions {
            memory.push(t)?;
        }
        memory.read_only = true;
        Ok(memory)
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn input_shape(&self) -> Option<[usize; 3]> {
        self.input_shape
    }

    /// Appends `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        if self.read_only {
            return Err(ReplayError::ReadOnly(self.name));
        }
        let shape = t.state.input_shape();
        if t.next_state.input_shape() != shape {
            return Err(ReplayError::ShapeMismatch { expected: shape, found: t.next_state.input_shape() });
        }
        match self.input_shape {
            Some(expected) if expected != shape => return Err(ReplayError::ShapeMismatch { expected, found: shape }),
            None => self.input_shape = Some(shape),
            _ => {}
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(t);
        } else {
            self.buffer[self.write_index] = t;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.buffer.len() < self.capacity { 0 } else { self.write_index };
        self.buffer[split..].iter().chain(&self.buffer[..split])
    }

    /// `k` independent uniform draws, with replacement.
    pub fn sample<'a, R: Rng>(&'a self, k: usize, rng: &mut R) -> Result<Vec<&'a Transition>, ReplayError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        if self.buffer.is_empty() {
            return Err(ReplayError::EmptyMemory(self.name));
        }
        Ok((0..k).map(|_| &self.buffer[rng.gen_range(0..self.buffer.len())]).collect())
    }

    /// Index of a single uniform draw; exposed for sampling statistics.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> Result<usize, ReplayError> {
        if self.buffer.is_empty() {
            return Err(ReplayError::EmptyMemory(self.name));
        }
        Ok(rng.gen_range(0..self.buffer.len()))
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.buffer.get(index)
    }
}

/// Exactly `k_h` draws from `human` and `k_a` from `agent`, shuffled together.
pub fn sample_dual<'a, R: Rng>(
    human: &'a ReplayMemory,
    agent: &'a ReplayMemory,
    k_h: usize,
    k_a: usize,
    rng: &mut R,
) -> Result<Vec<&'a Transition>, ReplayError> {
    if k_h > 0 && human.is_empty() {
        return Err(ReplayError::EmptyMemory("human"));
    }
    if k_a > 0 && agent.is_empty() {
        return Err(ReplayError::EmptyMemory("agent"));
    }
    let mut batch = human.sample(k_h, rng)?;
    batch.extend(agent.sample(k_a, rng)?);
    batch.shuffle(rng);
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::envs::{ObsShape, Observation};

    fn transition(tag: u8, source: Source) -> Transition {
        let shape = ObsShape { channels: 4, height: 1, width: 2 };
        let obs = Observation::from_codes(shape, vec![tag % 4, tag / 4 % 4]).unwrap();
        let state = StackedState::padded(obs.clone(), 2);
        Transition { next_state: state.pushed(obs), state, action: tag as usize, reward: 0.0, terminal: false, source }
    }

    #[test]
    fn fifo_keeps_latest_three() {
        let mut m = ReplayMemory::new(3).unwrap();
        for tag in 0..4 {
            m.push(transition(tag, Source::Agent)).unwrap();
        }
        let tags: Vec<usize> = m.iter_oldest_first().map(|t| t.action).collect();
        assert_eq!(tags, [1, 2, 3]);
    }

    #[test]
    fn singleton_memory_repeats_its_entry() {
        let mut m = ReplayMemory::new(10).unwrap();
        m.push(transition(7, Source::Agent)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = m.sample(4, &mut rng).unwrap();
        assert!(batch.iter().all(|t| t.action == 7));
    }

    #[test]
    fn count_is_bounded_by_capacity() {
        let mut m = ReplayMemory::new(1000).unwrap();
        for i in 0..100_000u32 {
            m.push(transition((i % 16) as u8, Source::Agent)).unwrap();
        }
        assert_eq!(m.len(), 1000);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut m = ReplayMemory::new(4).unwrap();
        m.push(transition(0, Source::Agent)).unwrap();
        let shape = ObsShape { channels: 4, height: 2, width: 1 };
        let obs = Observation::from_codes(shape, vec![0, 1]).unwrap();
        let state = StackedState::padded(obs.clone(), 2);
        let bad = Transition { next_state: state.clone(), state, action: 0, reward: 0.0, terminal: true, source: Source::Agent };
        assert!(matches!(m.push(bad), Err(ReplayError::ShapeMismatch { .. })));
    }

    #[test]
    fn empty_memory_cannot_be_sampled() {
        let m = ReplayMemory::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.sample(1, &mut rng), Err(ReplayError::EmptyMemory("agent"))));
    }

    #[test]
    fn dual_batches_have_fixed_composition() {
        let human = ReplayMemory::frozen((0..5).map(|t| transition(t, Source::Human)).collect()).unwrap();
        let mut agent = ReplayMemory::new(50).unwrap();
        for t in 0..20 {
            agent.push(transition(t, Source::Agent)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let batch = sample_dual(&human, &agent, 16, 16, &mut rng).unwrap();
            assert_eq!(batch.len(), 32);
            assert_eq!(batch.iter().filter(|t| t.source == Source::Human).count(), 16);
        }
        let plain = sample_dual(&human, &agent, 0, 8, &mut rng).unwrap();
        assert!(plain.iter().all(|t| t.source == Source::Agent));
    }

    #[test]
    fn dual_sampling_names_the_empty_side() {
        let human = ReplayMemory::frozen(Vec::new()).unwrap();
        let mut agent = ReplayMemory::new(4).unwrap();
        agent.push(transition(1, Source::Agent)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_dual(&human, &agent, 16, 16, &mut rng).unwrap_err();
        assert!(matches!(err, ReplayError::EmptyMemory("human")));
        assert!(err.to_string().contains("human"));
    }

    #[test]
    fn human_memory_is_read_only() {
        let mut human = ReplayMemory::frozen(vec![transition(0, Source::Human)]).unwrap();
        assert!(matches!(human.push(transition(1, Source::Human)), Err(ReplayError::ReadOnly("human"))));
        assert_eq!(human.len(), 1);
    }

    #[test]
    fn fixed_seed_gives_fixed_samples() {
        let mut m = ReplayMemory::new(30).unwrap();
        for t in 0..30 {
            m.push(transition(t, Source::Agent)).unwrap();
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            m.sample(50, &mut rng).unwrap().iter().map(|t| t.action).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    proptest! {
        #[test]
        fn eviction_matches_reference_queue(capacity in 1usize..12, pushes in 0usize..60) {
            let mut m = ReplayMemory::new(capacity).unwrap();
            let mut reference = VecDeque::new();
            for i in 0..pushes {
                m.push(transition(i as u8, Source::Agent)).unwrap();
                reference.push_back(i as u8 as usize);
                if reference.len() > capacity {
                    reference.pop_front();
                }
            }
            let got: Vec<usize> = m.iter_oldest_first().map(|t| t.action).collect();
            prop_assert_eq!(got, reference.into_iter().collect::<Vec<_>>());
        }
    }
}
