use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Env, Observation, Policy};
use crate::neural::NetParams;

/// Index of the largest value; ties go to the lowest index (lowest power).
pub fn greedy_index(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Greedy with probability `1 − epsilon`, otherwise uniform over all actions.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f32], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        greedy_index(q)
    }
}

/// VDN mixer: the team value is the sum of the agents' values.
pub fn mix(q_selected: &[f64]) -> f64 {
    q_selected.iter().sum()
}

/// One-step target `r` for terminal transitions, else
/// `r + γ·Σ_i max_a Q⁻_i`.
pub fn td_target(reward: f64, terminal: bool, gamma: f64, next_max_q: &[f64]) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * mix(next_max_q)
    }
}

/// Shared-parameter recurrent Q-network policy for all agents.
#[derive(Debug, Clone)]
pub struct QPolicy {
    params: Arc<NetParams<f32>>,
    exploration: f64,
    hidden: Vec<f32>,
    rng: ChaCha8Rng,
    features: Vec<f32>,
    last_actions: Vec<usize>,
}

impl QPolicy {
    pub fn new(params: Arc<NetParams<f32>>, exploration: f64) -> Self {
        Self {
            params,
            exploration,
            hidden: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            features: Vec::new(),
            last_actions: Vec::new(),
        }
    }

    pub fn greedy(params: Arc<NetParams<f32>>) -> Self {
        Self::new(params, 0.0)
    }

    pub fn params(&self) -> &Arc<NetParams<f32>> {
        &self.params
    }

    pub fn set_exploration(&mut self, epsilon: f64) {
        self.exploration = epsilon;
    }

    /// Encoded observations of the last `act` call, `n_agents × width`.
    pub fn last_features(&self) -> &[f32] {
        &self.features
    }

    pub fn last_actions(&self) -> &[usize] {
        &self.last_actions
    }

    /// Action indices for the current slot.
    pub fn choose(&mut self, env: &Env, observations: &[Observation]) -> Vec<usize> {
        let enc = env.encoder();
        self.features.clear();
        for o in observations {
            enc.encode_into(o, &mut self.features);
        }
        let n = observations.len();
        let q = self
            .params
            .step(&self.features, n, &mut self.hidden)
            .expect("network input width matches the environment");
        let k = self.params.shape.outputs;
        self.last_actions = (0..n)
            .map(|i| epsilon_greedy(&q[i * k..(i + 1) * k], self.exploration, &mut self.rng))
            .collect();
        self.last_actions.clone()
    }
}

impl Policy for QPolicy {
    fn name(&self) -> &str {
        "icrl"
    }

    fn begin_episode(&mut self, env: &Env, seed: u64) {
        self.hidden = self.params.zero_hidden(env.n_agents());
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, env: &Env, observations: &[Observation]) -> Vec<f64> {
        let actions = self.choose(env, observations);
        actions.iter().map(|&a| env.action_space().power(a)).collect()
    }
}
