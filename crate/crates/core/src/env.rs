//! Dec-POMDP wrapper around the world: per-agent observations, action
//! constraints, the team reward and episode termination.
//!
//! Agents are the transmitters, indexed `0..n` in node-id order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::{AcousticsError, ChannelParams};
use crate::metrics::{self, EpisodeTrace, MetricsReport, UtilityWeights};
use crate::world::{
    self, Cylinder, Deployment, LayoutSpec, LinkParams, MobilityConfig, NodeId, NodeRole, Scenario,
    SlotOutcome, WorldError, WorldState,
};

/// Scenario configuration schema version.
pub const SCENARIO_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Acoustics(#[from] AcousticsError),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("{power_w} W is not in the action set")]
    UnknownAction { power_w: f64 },
    #[error("episode already terminated")]
    Terminated,
}

/// Transmit power levels, `{0} ∪ P`, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    levels_w: Vec<f64>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self {
            levels_w: vec![0.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
        }
    }
}

impl ActionSpace {
    /// Build from the non-zero power set `P`.
    pub fn from_powers(powers_w: &[f64]) -> Result<Self, EnvError> {
        let mut levels = vec![0.0];
        for &p in powers_w {
            if !(p.is_finite() && p > *levels.last().unwrap()) {
                return Err(EnvError::Config(format!(
                    "power levels must be positive and strictly increasing, got {powers_w:?}"
                )));
            }
            levels.push(p);
        }
        if levels.len() < 2 {
            return Err(EnvError::Config("power set is empty".into()));
        }
        Ok(Self { levels_w: levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels_w
    }

    pub fn len(&self) -> usize {
        self.levels_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels_w.is_empty()
    }

    pub fn power(&self, index: usize) -> f64 {
        self.levels_w[index]
    }

    pub fn max_power(&self) -> f64 {
        *self.levels_w.last().unwrap()
    }

    pub fn min_nonzero(&self) -> f64 {
        self.levels_w[1]
    }

    pub fn index_of(&self, power_w: f64) -> Option<usize> {
        self.levels_w.iter().position(|&p| p == power_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalfunctionBehavior {
    /// Malfunctioning nodes stop transmitting.
    Silent,
    /// Malfunctioning nodes pick uniformly random power levels.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalfunctionModes {
    pub training: MalfunctionBehavior,
    pub evaluation: MalfunctionBehavior,
}

impl Default for MalfunctionModes {
    fn default() -> Self {
        Self {
            training: MalfunctionBehavior::Silent,
            evaluation: MalfunctionBehavior::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterfererConfig {
    pub enabled: bool,
    pub power_w: f64,
}

impl Default for InterfererConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            power_w: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub weights: UtilityWeights,
    pub fairness_window_h: usize,
    pub lifetime_requirement_slots: u32,
    pub violation_penalty: f64,
}

/// Everything that defines an environment. Defaults follow the evaluation
/// setup: 8 kHz / 3 kHz channel, k = 1.5, 5 kJ batteries, 30-slot lifetime
/// requirement, 10 dB threshold, {2..64} W power set, unit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub transmitters: usize,
    /// Broadcast only: total network nodes including transmitters.
    pub nodes: usize,
    pub horizon_slots: u32,
    pub battery_j: f64,
    pub cease_fraction: f64,
    pub t_tran_s: f64,
    pub t_guard_s: f64,
    pub gamma_th_db: f64,
    pub placement_radius_m: f64,
    pub region: Cylinder,
    pub mobility: MobilityConfig,
    pub interferer: InterfererConfig,
    pub channel: ChannelParams,
    pub power_levels_w: Vec<f64>,
    pub weights: UtilityWeights,
    /// Reward fairness horizon; `None` uses the number of transmitters.
    pub fairness_window: Option<usize>,
    pub violation_penalty: f64,
    /// Malfunction rate used for evaluation episodes.
    pub epsilon: f64,
    pub malfunction: MalfunctionModes,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Unicast,
            transmitters: 5,
            nodes: 10,
            horizon_slots: 30,
            battery_j: 5000.0,
            cease_fraction: 0.1,
            t_tran_s: 3.0,
            t_guard_s: 0.1,
            gamma_th_db: 10.0,
            placement_radius_m: 3500.0,
            region: Cylinder::default(),
            mobility: MobilityConfig::default(),
            interferer: InterfererConfig::default(),
            channel: ChannelParams::default(),
            power_levels_w: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            weights: UtilityWeights::default(),
            fairness_window: None,
            violation_penalty: -100.0,
            epsilon: 0.0,
            malfunction: MalfunctionModes::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.transmitters == 0 {
            return bad("transmitters must be at least 1");
        }
        if self.scenario == Scenario::Broadcast && self.nodes <= self.transmitters {
            return bad("broadcast needs more nodes than transmitters");
        }
        if self.horizon_slots == 0 {
            return bad("horizon_slots must be at least 1");
        }
        if !(self.battery_j > 0.0) {
            return bad("battery_j must be positive");
        }
        if !(0.0..1.0).contains(&self.cease_fraction) {
            return bad("cease_fraction must be in [0, 1)");
        }
        if !(self.t_tran_s > 0.0) || !(self.t_guard_s >= 0.0) {
            return bad("t_tran_s must be positive and t_guard_s non-negative");
        }
        if !self.gamma_th_db.is_finite() {
            return bad("gamma_th_db must be finite");
        }
        if !(self.placement_radius_m >= 0.0 && self.placement_radius_m <= self.region.radius_m) {
            return bad("placement_radius_m must lie inside the region");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if !self.weights.is_valid() {
            return bad("weights must be non-negative and not all zero");
        }
        if self.fairness_window == Some(0) {
            return bad("fairness_window must be at least 1");
        }
        if !(self.interferer.power_w >= 0.0) {
            return bad("interferer.power_w must be non-negative");
        }
        self.channel.validate()?;
        ActionSpace::from_powers(&self.power_levels_w)?;
        Ok(())
    }

    pub fn layout(&self) -> LayoutSpec {
        LayoutSpec {
            scenario: self.scenario,
            transmitters: self.transmitters,
            nodes: self.nodes,
            region: self.region,
            placement_radius_m: self.placement_radius_m,
            battery_j: self.battery_j,
            interferer_power_w: self.interferer.enabled.then_some(self.interferer.power_w),
        }
    }

    pub fn deployment(&self) -> Deployment {
        Deployment::standard(&self.layout())
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            weights: self.weights,
            fairness_window_h: self.fairness_window.unwrap_or(self.transmitters),
            lifetime_requirement_slots: self.horizon_slots,
            violation_penalty: self.violation_penalty,
        }
    }
}

/// One agent's local view at the start of a slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub node_id: NodeId,
    pub agent_index: usize,
    pub self_position: [f64; 3],
    pub residual_energy_ratio: f64,
    pub last_send_flag: bool,
    pub past_send_ratio: f64,
    pub prev_power_w: f64,
    pub receiver_positions: Vec<[f64; 3]>,
    /// Other transmitters, then external entities.
    pub interferer_positions: Vec<[f64; 3]>,
}

/// Flattens observations into network inputs.
///
/// Layout: normalised self position (3), residual energy, last-send flag,
/// past-send ratio, previous power / max power, one-hot agent index, then
/// receiver and interferer positions (3 each). x and y are divided by the
/// region radius, z by its height.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEncoder {
    region: Cylinder,
    max_power_w: f64,
    n_agents: usize,
    n_receivers: usize,
    n_interferers: usize,
}

impl ObservationEncoder {
    pub fn width(&self) -> usize {
        7 + self.n_agents + 3 * (self.n_receivers + self.n_interferers)
    }

    fn pos(&self, p: &[f64; 3], out: &mut Vec<f32>) {
        out.push((p[0] / self.region.radius_m) as f32);
        out.push((p[1] / self.region.radius_m) as f32);
        out.push((p[2] / self.region.height_m) as f32);
    }

    pub fn encode_into(&self, obs: &Observation, out: &mut Vec<f32>) {
        let start = out.len();
        self.pos(&obs.self_position, out);
        out.push(obs.residual_energy_ratio as f32);
        out.push(if obs.last_send_flag { 1.0 } else { 0.0 });
        out.push(obs.past_send_ratio as f32);
        out.push((obs.prev_power_w / self.max_power_w) as f32);
        for i in 0..self.n_agents {
            out.push(if i == obs.agent_index { 1.0 } else { 0.0 });
        }
        for p in obs.receiver_positions.iter().take(self.n_receivers) {
            self.pos(p, out);
        }
        for p in obs.interferer_positions.iter().take(self.n_interferers) {
            self.pos(p, out);
        }
        out.resize(start + self.width(), 0.0);
    }

    pub fn encode(&self, obs: &Observation) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.width());
        self.encode_into(obs, &mut v);
        v
    }
}

/// Team reward of the latest slot in `outcomes`.
///
/// Returns `(reward, terminal)`. When the lifetime requirement is violated the
/// reward is the violation penalty and the episode ends. Otherwise
/// `α·I_spa + β·I_fair,h − µ·ς` with `ς = −I_ief ∈ [0, 1]`.
pub fn team_reward(outcomes: &[SlotOutcome], cfg: &RewardConfig, lifetime_ok: bool) -> (f64, bool) {
    if !lifetime_ok {
        return (cfg.violation_penalty, true);
    }
    let Some(last) = outcomes.last() else {
        return (0.0, false);
    };
    let w = &cfg.weights;
    let spa = metrics::spatial_reuse_index(last);
    let fair = metrics::fairness_index(outcomes, cfg.fairness_window_h);
    let penalty = -metrics::ineffective_index(last);
    let terminal = last.slot >= cfg.lifetime_requirement_slots;
    (w.alpha * spa + w.beta * fair - w.mu * penalty, terminal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentStatus {
    /// Acts by its policy.
    Active,
    Malfunctioning,
    /// Below the cease-transmission threshold.
    Depleted,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    /// Observations for the next slot.
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub terminal: bool,
    pub violated: bool,
    /// Executed power per agent.
    pub executed: Vec<f64>,
    /// Status of each agent during the resolved slot.
    pub status: Vec<AgentStatus>,
    pub outcome: SlotOutcome,
}

/// One environment instance. Single-threaded; run independent instances for
/// parallel rollouts.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: ScenarioConfig,
    reward: RewardConfig,
    link: LinkParams,
    actions: ActionSpace,
    encoder: ObservationEncoder,
    initial: WorldState,
    agents: Vec<NodeId>,
    t_slot_s: f64,
    world: WorldState,
    history: Vec<WorldState>,
    outcomes: Vec<SlotOutcome>,
    behavior: MalfunctionBehavior,
    rng: ChaCha8Rng,
    send_counts: Vec<u32>,
    last_power: Vec<f64>,
    done: bool,
    violated: bool,
    reward_sum: f64,
}

impl Env {
    pub fn new(cfg: &ScenarioConfig, deployment: &Deployment) -> Result<Self, EnvError> {
        cfg.validate()?;
        let initial = deployment.to_world()?;
        let agents = initial.transmitter_ids();
        let n_receivers = initial.nodes[agents[0]].receivers().len();
        if agents.iter().any(|&a| initial.nodes[a].receivers().len() != n_receivers) {
            return Err(EnvError::Config("all transmitters need the same number of receivers".into()));
        }
        let n_external = initial.interferers().count();
        let link = LinkParams::new(cfg.channel, cfg.gamma_th_db, cfg.t_tran_s)?;
        let actions = ActionSpace::from_powers(&cfg.power_levels_w)?;
        let encoder = ObservationEncoder {
            region: deployment.region,
            max_power_w: actions.max_power(),
            n_agents: agents.len(),
            n_receivers,
            n_interferers: agents.len() - 1 + n_external,
        };
        let t_slot_s =
            crate::acoustics::slot_duration(cfg.t_tran_s, initial.max_pair_distance_m(), cfg.t_guard_s, &cfg.channel);
        let mut reward = cfg.reward_config();
        reward.fairness_window_h = cfg.fairness_window.unwrap_or(agents.len());
        let n = agents.len();
        Ok(Self {
            cfg: cfg.clone(),
            reward,
            link,
            actions,
            encoder,
            world: initial.clone(),
            history: vec![initial.clone()],
            initial,
            agents,
            t_slot_s,
            outcomes: Vec::new(),
            behavior: cfg.malfunction.evaluation,
            rng: ChaCha8Rng::seed_from_u64(0),
            send_counts: vec![0; n],
            last_power: vec![0.0; n],
            done: false,
            violated: false,
            reward_sum: 0.0,
        })
    }

    /// Environment for the scenario's standard layout.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, EnvError> {
        Self::new(cfg, &cfg.deployment())
    }

    /// Start a new episode.
    pub fn reset(&mut self, seed: u64, epsilon: f64, behavior: MalfunctionBehavior) -> Vec<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let horizon = self.cfg.horizon_slots;
        let w = world::sample_tracks(&self.initial, &self.cfg.region, &mut self.rng);
        let w = world::apply_malfunctions(&w, epsilon, horizon, &mut self.rng);
        self.world = world::activate_malfunctions(&w, 1);
        self.history = vec![self.world.clone()];
        self.outcomes.clear();
        self.behavior = behavior;
        self.send_counts.iter_mut().for_each(|c| *c = 0);
        self.last_power.iter_mut().for_each(|p| *p = 0.0);
        self.done = false;
        self.violated = false;
        self.reward_sum = 0.0;
        self.observations()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn link(&self) -> &LinkParams {
        &self.link
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn encoder(&self) -> &ObservationEncoder {
        &self.encoder
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn agents(&self) -> &[NodeId] {
        &self.agents
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn t_slot_s(&self) -> f64 {
        self.t_slot_s
    }

    /// Slot about to be played, starting at 1.
    pub fn next_slot(&self) -> u32 {
        self.world.slot + 1
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reward_sum(&self) -> f64 {
        self.reward_sum
    }

    pub fn outcomes(&self) -> &[SlotOutcome] {
        &self.outcomes
    }

    pub fn behavior(&self) -> MalfunctionBehavior {
        self.behavior
    }

    pub fn status(&self, agent: usize) -> AgentStatus {
        let node = &self.world.nodes[self.agents[agent]];
        if node.residual_j() < world::cease_threshold_j(node, self.cfg.cease_fraction) {
            AgentStatus::Depleted
        } else if node.malfunction {
            AgentStatus::Malfunctioning
        } else {
            AgentStatus::Active
        }
    }

    pub fn observe(&self, agent: usize) -> Observation {
        let id = self.agents[agent];
        let node = &self.world.nodes[id];
        let past_slots = self.world.slot;
        let receivers = node.receivers().iter().map(|&r| self.world.nodes[r].position).collect();
        let mut interferers: Vec<[f64; 3]> = self
            .agents
            .iter()
            .filter(|&&a| a != id)
            .map(|&a| self.world.nodes[a].position)
            .collect();
        interferers.extend(self.world.interferers().map(|(n, _)| n.position));
        Observation {
            node_id: id,
            agent_index: agent,
            self_position: node.position,
            residual_energy_ratio: node.residual_ratio(),
            last_send_flag: self.last_power[agent] > 0.0,
            past_send_ratio: if past_slots == 0 {
                0.0
            } else {
                self.send_counts[agent] as f64 / past_slots as f64
            },
            prev_power_w: self.last_power[agent],
            receiver_positions: receivers,
            interferer_positions: interferers,
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.agents.len()).map(|a| self.observe(a)).collect()
    }

    /// Power the agent actually transmits with given its proposal.
    pub fn constrain_action(&mut self, agent: usize, proposed_w: f64) -> f64 {
        let node = &self.world.nodes[self.agents[agent]];
        let residual = node.residual_j();
        let chosen = match self.status(agent) {
            AgentStatus::Depleted => return 0.0,
            AgentStatus::Malfunctioning => match self.behavior {
                MalfunctionBehavior::Silent => return 0.0,
                MalfunctionBehavior::Random => {
                    let i = self.rng.random_range(0..self.actions.len());
                    self.actions.power(i)
                }
            },
            AgentStatus::Active => proposed_w,
        };
        if chosen * self.cfg.t_tran_s > residual {
            0.0
        } else {
            chosen
        }
    }

    /// Play one slot with one proposed power per agent.
    pub fn step(&mut self, proposed: &[f64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Terminated);
        }
        if proposed.len() != self.agents.len() {
            return Err(EnvError::ActionCount {
                expected: self.agents.len(),
                got: proposed.len(),
            });
        }
        if let Some(&p) = proposed.iter().find(|&&p| self.actions.index_of(p).is_none()) {
            return Err(EnvError::UnknownAction { power_w: p });
        }
        let status: Vec<AgentStatus> = (0..self.agents.len()).map(|a| self.status(a)).collect();
        let executed: Vec<f64> = (0..self.agents.len())
            .map(|a| self.constrain_action(a, proposed[a]))
            .collect();
        let joint: BTreeMap<NodeId, f64> = self.agents.iter().copied().zip(executed.iter().copied()).collect();
        let (outcome, after) = world::resolve_slot(&self.world, &joint, &self.link)?;

        let violated = self
            .agents
            .iter()
            .any(|&id| world::service_ended(&self.world.nodes[id], &after.nodes[id], self.cfg.cease_fraction));
        for (a, &p) in executed.iter().enumerate() {
            if p > 0.0 {
                self.send_counts[a] += 1;
            }
            self.last_power[a] = p;
        }
        self.outcomes.push(outcome.clone());
        let (reward, terminal) = team_reward(&self.outcomes, &self.reward, !violated);

        let moved = world::step_mobility(
            &after,
            &self.cfg.mobility,
            &self.cfg.region,
            self.t_slot_s,
            self.cfg.horizon_slots,
            &mut self.rng,
        );
        self.world = world::activate_malfunctions(&moved, moved.slot + 1);
        self.history.push(self.world.clone());
        self.done = terminal;
        self.violated = violated;
        self.reward_sum += reward;
        Ok(StepResult {
            observations: self.observations(),
            reward,
            terminal,
            violated,
            executed,
            status,
            outcome,
        })
    }

    pub fn history(&self) -> &[WorldState] {
        &self.history
    }

    pub fn lifetime(&self) -> world::Lifetime {
        world::network_lifetime(&self.history, self.cfg.horizon_slots, self.cfg.cease_fraction)
    }

    pub fn trace(&self) -> EpisodeTrace {
        let lt = self.lifetime();
        EpisodeTrace {
            lifetime_slots: lt.slots.min(self.outcomes.len() as u32),
            outcomes: self.outcomes.clone(),
            scenario: self.cfg.scenario,
            t_slot_s: self.t_slot_s,
            t_tran_s: self.cfg.t_tran_s,
        }
    }

    /// Distance-based view used by model-based baselines: positions of the
    /// agent's receivers and of external entities with their powers.
    pub fn link_view(&self, agent: usize) -> LinkView {
        let id = self.agents[agent];
        let node = &self.world.nodes[id];
        LinkView {
            position: node.position,
            receivers: node.receivers().iter().map(|&r| self.world.nodes[r].position).collect(),
            externals: self
                .world
                .nodes
                .iter()
                .filter_map(|n| match n.role {
                    NodeRole::ExternalInterferer { power_w } => Some((n.position, power_w)),
                    _ => None,
                })
                .collect(),
        }
    }
}

/// Derives an independent seed for `stream`/`index` from `base` (SplitMix64).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// A decision rule proposing one power per agent each slot. Proposals pass
/// through [`Env::constrain_action`] like any other.
pub trait Policy {
    fn name(&self) -> &str;
    /// Called after `Env::reset`; `seed` drives any policy randomness.
    fn begin_episode(&mut self, env: &Env, seed: u64);
    fn act(&mut self, env: &Env, observations: &[Observation]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub reward: f64,
    pub violated: bool,
    pub report: MetricsReport,
}

impl Env {
    /// Plays one full episode.
    pub fn run_episode(
        &mut self,
        policy: &mut dyn Policy,
        seed: u64,
        epsilon: f64,
        behavior: MalfunctionBehavior,
    ) -> Result<EpisodeResult, EnvError> {
        let mut obs = self.reset(seed, epsilon, behavior);
        policy.begin_episode(self, derive_seed(seed, 1, 0));
        let mut violated = false;
        while !self.done {
            let proposed = policy.act(self, &obs);
            let step = self.step(&proposed)?;
            violated |= step.violated;
            obs = step.observations;
        }
        let trace = self.trace();
        Ok(EpisodeResult {
            seed,
            reward: self.reward_sum,
            violated,
            report: MetricsReport::from_trace(&trace, &self.reward.weights, self.reward_sum),
        })
    }
}

/// Runs one episode per seed, in parallel when enabled. Results keep the
/// order of `seeds`.
pub fn evaluate<P: Policy + Clone + Send + Sync>(
    env: &Env,
    policy: &P,
    seeds: &[u64],
    epsilon: f64,
    behavior: MalfunctionBehavior,
) -> Result<Vec<EpisodeResult>, EnvError> {
    let run = |&seed: &u64| {
        let mut e = env.clone();
        let mut p = policy.clone();
        e.run_episode(&mut p, seed, epsilon, behavior)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(run).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkView {
    pub position: [f64; 3],
    pub receivers: Vec<[f64; 3]>,
    pub externals: Vec<([f64; 3], f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::NoiseConfig;
    use crate::world::{LinkRecord, TxRecord};

    fn quiet_cfg(n: usize) -> ScenarioConfig {
        ScenarioConfig {
            transmitters: n,
            interferer: InterfererConfig {
                enabled: false,
                power_w: 0.0,
            },
            mobility: MobilityConfig {
                current_speed_mps: 0.0,
                drift_direction_deg: 0.0,
                jitter_std_mps: 0.0,
            },
            channel: ChannelParams {
                ambient_noise: NoiseConfig::ConstantPower { watts: 1e-9 },
                ..ChannelParams::default()
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn first_observation() {
        let mut env = Env::from_config(&quiet_cfg(3)).unwrap();
        let obs = env.reset(1, 0.0, MalfunctionBehavior::Silent);
        for o in &obs {
            assert!(!o.last_send_flag);
            assert_eq!(o.past_send_ratio, 0.0);
            assert_eq!(o.prev_power_w, 0.0);
            assert_eq!(o.residual_energy_ratio, 1.0);
            assert_eq!(o.receiver_positions.len(), 1);
            assert_eq!(o.interferer_positions.len(), 2);
        }
        assert_eq!(env.encoder().encode(&obs[0]).len(), env.encoder().width());
    }

    #[test]
    fn past_send_ratio_counts() {
        let mut env = Env::from_config(&quiet_cfg(2)).unwrap();
        env.reset(1, 0.0, MalfunctionBehavior::Silent);
        for p in [8.0, 0.0, 8.0, 8.0] {
            env.step(&[p, 0.0]).unwrap();
        }
        let o = env.observe(0);
        assert_eq!(o.past_send_ratio, 0.75);
        assert!(o.last_send_flag);
        assert_eq!(o.prev_power_w, 8.0);
    }

    #[test]
    fn constraints() {
        let mut env = Env::from_config(&quiet_cfg(2)).unwrap();
        env.reset(1, 0.0, MalfunctionBehavior::Silent);
        assert_eq!(env.constrain_action(0, 8.0), 8.0);

        env.world.nodes[0].malfunction = true;
        for p in env.actions.levels().to_vec() {
            assert_eq!(env.constrain_action(0, p), 0.0);
        }
        env.behavior = MalfunctionBehavior::Random;
        let draws: Vec<f64> = (0..200).map(|_| env.constrain_action(0, 0.0)).collect();
        assert!(draws.iter().any(|&p| p > 0.0));
        assert!(draws.iter().all(|&p| env.actions.index_of(p).is_some()));

        env.world.nodes[1].energy_used_j = 4600.0;
        assert_eq!(env.status(1), AgentStatus::Depleted);
        assert_eq!(env.constrain_action(1, 8.0), 0.0);
    }

    fn slot(t: u32, sends: &[bool], ok: &[bool]) -> SlotOutcome {
        SlotOutcome {
            slot: t,
            transmitters: (0..sends.len())
                .map(|i| TxRecord {
                    id: i,
                    power_w: if sends[i] { 4.0 } else { 0.0 },
                    receivers: vec![10 + i],
                })
                .collect(),
            links: (0..sends.len())
                .filter(|&i| sends[i])
                .map(|i| LinkRecord {
                    tx: i,
                    rx: 10 + i,
                    power_w: 4.0,
                    sinr: 1.0,
                    received: ok[i],
                    rate_bps: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn reward_cases() {
        let cfg = RewardConfig {
            weights: UtilityWeights::default(),
            fairness_window_h: 5,
            lifetime_requirement_slots: 30,
            violation_penalty: -100.0,
        };
        let s = slot(1, &[true, true, false, false, false], &[true, false, false, false, false]);
        let (r, term) = team_reward(&[s.clone()], &cfg, true);
        assert!((r + 0.1).abs() < 1e-12, "{r}");
        assert!(!term);
        assert_eq!(team_reward(&[s], &cfg, false), (-100.0, true));

        let all = slot(30, &[true; 5], &[true; 5]);
        let (r, term) = team_reward(&[all], &cfg, true);
        assert!((r - 2.0).abs() < 1e-12);
        assert!(term);
    }

    #[test]
    fn horizon_and_violation() {
        let mut env = Env::from_config(&quiet_cfg(2)).unwrap();
        env.reset(3, 0.0, MalfunctionBehavior::Silent);
        let mut n = 0;
        loop {
            let r = env.step(&[8.0, 0.0]).unwrap();
            n += 1;
            if r.terminal {
                assert!(!r.violated);
                break;
            }
        }
        assert_eq!(n, 30);
        assert!(env.step(&[0.0, 0.0]).is_err());

        env.reset(3, 0.0, MalfunctionBehavior::Silent);
        let mut rewards = Vec::new();
        loop {
            let r = env.step(&[64.0, 0.0]).unwrap();
            rewards.push(r.reward);
            if r.terminal {
                break;
            }
        }
        assert_eq!(rewards.len(), 24);
        assert_eq!(*rewards.last().unwrap(), -100.0);
        assert_eq!(env.lifetime().slots, 23);
        assert_eq!(env.world().nodes[0].energy_used_j, 24.0 * 192.0);
    }

    #[test]
    fn rejects_bad_actions() {
        let mut env = Env::from_config(&quiet_cfg(2)).unwrap();
        env.reset(3, 0.0, MalfunctionBehavior::Silent);
        assert!(matches!(env.step(&[8.0]), Err(EnvError::ActionCount { .. })));
        assert!(matches!(env.step(&[7.0, 0.0]), Err(EnvError::UnknownAction { .. })));
    }

    #[test]
    fn deterministic_episodes() {
        let cfg = ScenarioConfig::default();
        let run = |seed| {
            let mut env = Env::from_config(&cfg).unwrap();
            env.reset(seed, 0.5, MalfunctionBehavior::Random);
            let mut out = Vec::new();
            for t in 0..30 {
                let p = if t % 2 == 0 { 16.0 } else { 4.0 };
                let r = env.step(&vec![p; env.n_agents()]).unwrap();
                out.push((r.reward, r.outcome.clone(), r.observations.clone()));
                if r.terminal {
                    break;
                }
            }
            out
        };
        let a = run(9);
        let b = run(9);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0.to_bits(), y.0.to_bits());
            assert_eq!(x.1, y.1);
            assert_eq!(x.2, y.2);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig::default().validate().is_ok());
        let bad = ScenarioConfig {
            power_levels_w: vec![4.0, 2.0],
            ..ScenarioConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig {
            epsilon: 1.5,
            ..ScenarioConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
