//! Non-learning comparison policies: equal power (EPA), open-loop power
//! adaptation (OLPA), random power (RPA) and slotted open-loop (SOLPA).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::{attenuation, ChannelParams, LinkGeometry};
use crate::env::{ActionSpace, Env, Observation, Policy};

/// Constant EPA power.
pub const EPA_POWER_W: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Epa,
    Olpa,
    Rpa,
    Solpa,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Epa, BaselineKind::Olpa, BaselineKind::Rpa, BaselineKind::Solpa];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Epa => "epa",
            BaselineKind::Olpa => "olpa",
            BaselineKind::Rpa => "rpa",
            BaselineKind::Solpa => "solpa",
        }
    }
}

/// Smallest non-zero level whose open-loop SINR estimate
/// `η0·p / (A·(I_a + I_s))` clears `gamma_th` on every link in
/// `attenuations`; the largest level when none does.
pub fn olpa_power(actions: &ActionSpace, eta: f64, attenuations: &[f64], noise_w: f64, gamma_th: f64) -> f64 {
    let worst = attenuations.iter().fold(0.0f64, |m, &a| m.max(a));
    actions.levels()[1..]
        .iter()
        .copied()
        .find(|&p| eta * p / (worst * noise_w) >= gamma_th)
        .unwrap_or(actions.max_power())
}

/// Estimated external interference at `rx`: attenuated powers of the
/// external entities.
pub fn external_interference(rx: &[f64; 3], externals: &[([f64; 3], f64)], ch: &ChannelParams) -> f64 {
    externals
        .iter()
        .map(|(pos, p)| p / attenuation(LinkGeometry::between(pos, rx), ch))
        .sum()
}

/// OLPA power for `agent` in the current slot.
pub fn olpa_action(env: &Env, agent: usize) -> f64 {
    let view = env.link_view(agent);
    let ch = &env.link().channel;
    let ambient = env.link().ambient_w();
    // The weakest receiver sets the budget: largest A·(I_a + I_s).
    let mut worst = 0.0f64;
    for rx in &view.receivers {
        let a = attenuation(LinkGeometry::between(&view.position, rx), ch);
        let noise = ambient + external_interference(rx, &view.externals, ch);
        worst = worst.max(a * noise);
    }
    olpa_power(env.action_space(), ch.transducer_eff, &[worst], 1.0, env.link().gamma_th)
}

/// Uniform draw over all levels including silence.
pub fn rpa_action<R: Rng + ?Sized>(actions: &ActionSpace, rng: &mut R) -> f64 {
    actions.power(rng.random_range(0..actions.len()))
}

/// Round-robin: agent `(slot − 1) mod n` sends at its OLPA level.
pub fn solpa_action(env: &Env, agent: usize, slot: u32) -> f64 {
    let turn = (slot.saturating_sub(1) as usize) % env.n_agents();
    if agent == turn {
        olpa_action(env, agent)
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct BaselinePolicy {
    pub kind: BaselineKind,
    pub epa_power_w: f64,
    rng: ChaCha8Rng,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            epa_power_w: EPA_POWER_W,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Policy for BaselinePolicy {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn begin_episode(&mut self, _env: &Env, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, env: &Env, observations: &[Observation]) -> Vec<f64> {
        let slot = env.next_slot();
        (0..observations.len())
            .map(|a| match self.kind {
                BaselineKind::Epa => self.epa_power_w,
                BaselineKind::Olpa => olpa_action(env, a),
                BaselineKind::Rpa => rpa_action(env.action_space(), &mut self.rng),
                BaselineKind::Solpa => solpa_action(env, a, slot),
            })
            .collect()
    }
}
