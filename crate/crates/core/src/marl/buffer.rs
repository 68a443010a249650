use std::collections::VecDeque;

use rand::Rng;

/// One slot of joint experience. Observations are encoded network inputs,
/// `n_agents × width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub episode: u64,
    pub slot: u32,
    pub obs: Vec<f32>,
    /// Executed action index per agent.
    pub actions: Vec<u8>,
    /// Agents that acted by policy in this slot.
    pub active: Vec<bool>,
    pub reward: f64,
    pub next_obs: Vec<f32>,
    pub next_active: Vec<bool>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub id: u64,
    pub transitions: Vec<Transition>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// FIFO store of whole episodes bounded by a transition count.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity_transitions: usize) -> Self {
        Self {
            capacity: capacity_transitions,
            episodes: VecDeque::new(),
            transitions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn fill(&self) -> usize {
        self.transitions
    }

    pub fn episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Appends an episode, evicting the oldest until within capacity.
    pub fn push(&mut self, episode: EpisodeRecord) {
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        while self.transitions > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty while over capacity");
            self.transitions -= old.len();
        }
    }

    /// `count` distinct episodes chosen uniformly, or `None` while fewer are
    /// stored.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Option<Vec<&EpisodeRecord>> {
        if count == 0 || self.episodes.len() < count {
            return None;
        }
        let idx = rand::seq::index::sample(rng, self.episodes.len(), count);
        Some(idx.iter().map(|i| &self.episodes[i]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }
}
