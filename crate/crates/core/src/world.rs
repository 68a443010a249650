//! Network topology, node state, mobility, the malfunction process and
//! per-slot transmission resolution.
//!
//! Stepping functions take a `&WorldState` and return a new one; randomness is
//! always drawn from an explicit RNG stream so episodes replay exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::{self, AcousticsError, ChannelParams, LinkGeometry};

pub type NodeId = usize;

/// Deployment file schema version.
pub const DEPLOYMENT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {id} is not a transmitter but was assigned {power_w} W (half-duplex receivers cannot send)")]
    NotATransmitter { id: NodeId, power_w: f64 },
    #[error("invalid transmit power {power_w} W for node {id}")]
    InvalidPower { id: NodeId, power_w: f64 },
    #[error("invalid deployment: {0}")]
    Deployment(String),
    #[error(transparent)]
    Acoustics(#[from] AcousticsError),
    #[error("deployment json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Unicast,
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeRole {
    Transmitter { receivers: Vec<NodeId> },
    Receiver,
    ExternalInterferer { power_w: f64 },
}

/// Straight path of an external entity, traversed over one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub start: [f64; 3],
    pub end: [f64; 3],
}

impl Track {
    pub fn at(&self, frac: f64) -> [f64; 3] {
        let f = frac.clamp(0.0, 1.0);
        [
            self.start[0] + (self.end[0] - self.start[0]) * f,
            self.start[1] + (self.end[1] - self.start[1]) * f,
            self.start[2] + (self.end[2] - self.start[2]) * f,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub position: [f64; 3],
    pub battery_j: f64,
    pub energy_used_j: f64,
    /// κ. Once set it never clears.
    pub malfunction: bool,
    pub malfunction_onset_slot: Option<u32>,
    pub role: NodeRole,
    pub track: Option<Track>,
}

impl NodeState {
    pub fn residual_j(&self) -> f64 {
        self.battery_j - self.energy_used_j
    }

    pub fn residual_ratio(&self) -> f64 {
        if self.battery_j > 0.0 {
            self.residual_j() / self.battery_j
        } else {
            0.0
        }
    }

    pub fn is_transmitter(&self) -> bool {
        matches!(self.role, NodeRole::Transmitter { .. })
    }

    pub fn receivers(&self) -> &[NodeId] {
        match &self.role {
            NodeRole::Transmitter { receivers } => receivers,
            _ => &[],
        }
    }
}

/// Vertical cylinder with its base at `z = 0` and axis through the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    pub radius_m: f64,
    pub height_m: f64,
}

impl Default for Cylinder {
    fn default() -> Self {
        Self {
            radius_m: 4000.0,
            height_m: 1000.0,
        }
    }
}

impl Cylinder {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        let r2 = p[0] * p[0] + p[1] * p[1];
        r2 <= self.radius_m * self.radius_m * (1.0 + 1e-12) && p[2] >= 0.0 && p[2] <= self.height_m
    }

    /// Mirror a point back inside the boundary.
    pub fn reflect(&self, p: [f64; 3]) -> [f64; 3] {
        let mut z = p[2];
        let h = self.height_m;
        // a single displacement is never larger than the region
        if z < 0.0 {
            z = -z;
        }
        if z > h {
            z = 2.0 * h - z;
        }
        z = z.clamp(0.0, h);
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let (mut x, mut y) = (p[0], p[1]);
        if r > self.radius_m {
            let rr = (2.0 * self.radius_m - r).clamp(0.0, self.radius_m);
            x *= rr / r;
            y *= rr / r;
        }
        [x, y, z]
    }

    /// Maximum distance between any two points of the region.
    pub fn diagonal_m(&self) -> f64 {
        (4.0 * self.radius_m * self.radius_m + self.height_m * self.height_m).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    /// Indexed by node id.
    pub nodes: Vec<NodeState>,
    /// Number of slots resolved so far.
    pub slot: u32,
}

impl WorldState {
    pub fn node(&self, id: NodeId) -> Result<&NodeState, WorldError> {
        self.nodes.get(id).ok_or(WorldError::UnknownNode(id))
    }

    pub fn transmitters(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter().filter(|n| n.is_transmitter())
    }

    pub fn transmitter_ids(&self) -> Vec<NodeId> {
        self.transmitters().map(|n| n.id).collect()
    }

    pub fn interferers(&self) -> impl Iterator<Item = (&NodeState, f64)> {
        self.nodes.iter().filter_map(|n| match n.role {
            NodeRole::ExternalInterferer { power_w } => Some((n, power_w)),
            _ => None,
        })
    }

    /// Largest transmitter to intended-receiver distance.
    pub fn max_pair_distance_m(&self) -> f64 {
        let mut d_max: f64 = 0.0;
        for tx in self.transmitters() {
            for &rx in tx.receivers() {
                d_max = d_max.max(acoustics::distance(&tx.position, &self.nodes[rx].position));
            }
        }
        d_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub current_speed_mps: f64,
    pub drift_direction_deg: f64,
    pub jitter_std_mps: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            current_speed_mps: 0.3,
            drift_direction_deg: 45.0,
            jitter_std_mps: 0.05,
        }
    }
}

/// Advance positions by one slot.
///
/// Network nodes drift with the current plus isotropic Gaussian jitter and
/// are reflected at the region boundary. External entities move along their
/// track, reaching the end at slot `horizon`.
pub fn step_mobility<R: Rng + ?Sized>(
    state: &WorldState,
    cfg: &MobilityConfig,
    region: &Cylinder,
    t_slot_s: f64,
    horizon: u32,
    rng: &mut R,
) -> WorldState {
    let mut next = state.clone();
    let theta = cfg.drift_direction_deg.to_radians();
    let drift = [
        cfg.current_speed_mps * t_slot_s * theta.cos(),
        cfg.current_speed_mps * t_slot_s * theta.sin(),
        0.0,
    ];
    let jitter = (cfg.jitter_std_mps > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter_std_mps * t_slot_s).expect("finite jitter"));
    for node in next.nodes.iter_mut() {
        if let Some(track) = node.track {
            let frac = (state.slot + 1) as f64 / horizon.max(1) as f64;
            node.position = track.at(frac);
            continue;
        }
        if matches!(node.role, NodeRole::ExternalInterferer { .. }) {
            continue;
        }
        let mut p = node.position;
        for k in 0..3 {
            p[k] += drift[k];
            if let Some(n) = &jitter {
                p[k] += n.sample(rng);
            }
        }
        node.position = region.reflect(p);
    }
    next
}

/// Draw a fresh straight path across the region for every external entity.
pub fn sample_tracks<R: Rng + ?Sized>(state: &WorldState, region: &Cylinder, rng: &mut R) -> WorldState {
    let mut next = state.clone();
    for node in next.nodes.iter_mut() {
        if !matches!(node.role, NodeRole::ExternalInterferer { .. }) {
            continue;
        }
        let edge = |rng: &mut R| {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let z: f64 = rng.random_range(0.0..=region.height_m);
            [region.radius_m * a.cos(), region.radius_m * a.sin(), z]
        };
        let track = Track {
            start: edge(rng),
            end: edge(rng),
        };
        node.position = track.start;
        node.track = Some(track);
    }
    next
}

/// Decide each transmitter's malfunction destiny for an episode.
///
/// With probability `epsilon` a transmitter is destined to fail; its onset slot
/// is uniform on `[1, horizon]`. Flags are raised by [`activate_malfunctions`].
pub fn apply_malfunctions<R: Rng + ?Sized>(
    state: &WorldState,
    epsilon: f64,
    horizon: u32,
    rng: &mut R,
) -> WorldState {
    let eps = epsilon.clamp(0.0, 1.0);
    let mut next = state.clone();
    for node in next.nodes.iter_mut().filter(|n| n.is_transmitter()) {
        node.malfunction = false;
        node.malfunction_onset_slot = None;
        if rng.random_bool(eps) {
            node.malfunction_onset_slot = Some(rng.random_range(1..=horizon.max(1)));
        }
    }
    next
}

/// Raise κ for every node whose onset is at or before `slot`.
pub fn activate_malfunctions(state: &WorldState, slot: u32) -> WorldState {
    let mut next = state.clone();
    for node in next.nodes.iter_mut() {
        if matches!(node.malfunction_onset_slot, Some(s) if s <= slot) {
            node.malfunction = true;
        }
    }
    next
}

/// Channel and timing parameters needed to resolve a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub channel: ChannelParams,
    /// Linear SINR threshold.
    pub gamma_th: f64,
    pub t_tran_s: f64,
    ambient_w: f64,
}

impl LinkParams {
    pub fn new(channel: ChannelParams, gamma_th_db: f64, t_tran_s: f64) -> Result<Self, AcousticsError> {
        channel.validate()?;
        Ok(Self {
            ambient_w: acoustics::ambient_noise_power(&channel),
            channel,
            gamma_th: acoustics::db_to_linear(gamma_th_db),
            t_tran_s,
        })
    }

    pub fn ambient_w(&self) -> f64 {
        self.ambient_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub id: NodeId,
    /// 0 when idle.
    pub power_w: f64,
    /// Intended receivers this slot (broadcast drops receivers that are sending).
    pub receivers: Vec<NodeId>,
}

impl TxRecord {
    pub fn sends(&self) -> bool {
        self.power_w > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub tx: NodeId,
    pub rx: NodeId,
    pub power_w: f64,
    /// Linear SINR.
    pub sinr: f64,
    pub received: bool,
    pub rate_bps: f64,
}

/// Send/receive ledger of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub slot: u32,
    /// Every transmitter of the network, in id order.
    pub transmitters: Vec<TxRecord>,
    /// One record per scheduled (tx, rx) pair.
    pub links: Vec<LinkRecord>,
}

impl SlotOutcome {
    pub fn sends(&self) -> BTreeMap<NodeId, f64> {
        self.transmitters
            .iter()
            .filter(|t| t.sends())
            .map(|t| (t.id, t.power_w))
            .collect()
    }

    pub fn receptions(&self) -> BTreeMap<(NodeId, NodeId), bool> {
        self.links.iter().map(|l| ((l.tx, l.rx), l.received)).collect()
    }

    pub fn successes(&self) -> usize {
        self.links.iter().filter(|l| l.received).count()
    }

    /// Successful receptions per transmitter, aligned with `transmitters`.
    pub fn deliveries(&self) -> Vec<usize> {
        self.transmitters
            .iter()
            .map(|t| self.links.iter().filter(|l| l.tx == t.id && l.received).count())
            .collect()
    }
}

/// Resolve one slot: SINR per scheduled link, reception flags, rates and the
/// energy debit `p · T_tran` of every sender.
///
/// `joint_power` may omit nodes (treated as 0 W).
pub fn resolve_slot(
    state: &WorldState,
    joint_power: &BTreeMap<NodeId, f64>,
    link: &LinkParams,
) -> Result<(SlotOutcome, WorldState), WorldError> {
    for (&id, &p) in joint_power {
        let node = state.node(id)?;
        if !(p.is_finite() && p >= 0.0) {
            return Err(WorldError::InvalidPower { id, power_w: p });
        }
        if p > 0.0 && !node.is_transmitter() {
            return Err(WorldError::NotATransmitter { id, power_w: p });
        }
    }
    let power = |id: NodeId| joint_power.get(&id).copied().unwrap_or(0.0);
    let senders: Vec<&NodeState> = state.transmitters().filter(|n| power(n.id) > 0.0).collect();
    let externals: Vec<(&NodeState, f64)> = state.interferers().collect();
    let ch = &link.channel;

    let mut transmitters = Vec::new();
    let mut links = Vec::new();
    for tx in state.transmitters() {
        let p = power(tx.id);
        let receivers: Vec<NodeId> = tx
            .receivers()
            .iter()
            .copied()
            .filter(|&rx| power(rx) == 0.0)
            .collect();
        if p > 0.0 {
            for &rx in &receivers {
                let rx_pos = state.nodes[rx].position;
                let interferers: Vec<(f64, LinkGeometry)> = senders
                    .iter()
                    .filter(|s| s.id != tx.id)
                    .map(|s| (power(s.id), LinkGeometry::between(&s.position, &rx_pos)))
                    .collect();
                let external: f64 = externals
                    .iter()
                    .map(|(e, pw)| pw / acoustics::attenuation(LinkGeometry::between(&e.position, &rx_pos), ch))
                    .sum();
                let gamma = acoustics::sinr_with_noise(
                    p,
                    LinkGeometry::between(&tx.position, &rx_pos),
                    &interferers,
                    ch,
                    external,
                    link.ambient_w,
                )?;
                links.push(LinkRecord {
                    tx: tx.id,
                    rx,
                    power_w: p,
                    sinr: gamma,
                    received: gamma >= link.gamma_th,
                    rate_bps: acoustics::achievable_rate(gamma, ch, link.gamma_th),
                });
            }
        }
        transmitters.push(TxRecord {
            id: tx.id,
            power_w: p,
            receivers,
        });
    }

    let mut next = state.clone();
    next.slot = state.slot + 1;
    for s in &senders {
        next.nodes[s.id].energy_used_j += power(s.id) * link.t_tran_s;
    }
    Ok((
        SlotOutcome {
            slot: next.slot,
            transmitters,
            links,
        },
        next,
    ))
}

/// Energy level below which a node stops transmitting.
pub fn cease_threshold_j(node: &NodeState, cease_fraction: f64) -> f64 {
    node.battery_j * cease_fraction
}

/// True when `node` dropped below the cease threshold between `before` and
/// `after` while it was still intelligent.
pub fn service_ended(before: &NodeState, after: &NodeState, cease_fraction: f64) -> bool {
    let th = cease_threshold_j(after, cease_fraction);
    after.is_transmitter() && !after.malfunction && before.residual_j() >= th && after.residual_j() < th
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifetime {
    pub slots: u32,
    /// No intelligent node existed, so the minimum ran over an empty set.
    pub degenerate: bool,
}

/// Time until the first intelligent node's service ends.
///
/// `history[0]` is the state before slot 1 and `history[t]` the state after
/// slot `t`. A node whose residual energy falls below the cease threshold
/// during slot `t` served `t - 1` full slots.
pub fn network_lifetime(history: &[WorldState], horizon: u32, cease_fraction: f64) -> Lifetime {
    let Some(last) = history.last() else {
        return Lifetime {
            slots: horizon,
            degenerate: true,
        };
    };
    let mut any_intelligent = false;
    let mut lifetime = horizon;
    for tx in last.transmitters() {
        let mut ended = None;
        for t in 1..history.len() {
            if service_ended(&history[t - 1].nodes[tx.id], &history[t].nodes[tx.id], cease_fraction) {
                ended = Some(t as u32 - 1);
                break;
            }
        }
        match ended {
            Some(d) => {
                any_intelligent = true;
                lifetime = lifetime.min(d);
            }
            None if !tx.malfunction => any_intelligent = true,
            None => {}
        }
    }
    Lifetime {
        slots: lifetime,
        degenerate: !any_intelligent,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployedNode {
    pub id: NodeId,
    pub role: NodeRole,
    pub position: [f64; 3],
    #[serde(default)]
    pub battery_j: f64,
}

/// On-disk deployment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deployment {
    pub format: u32,
    pub scenario: Scenario,
    pub region: Cylinder,
    pub nodes: Vec<DeployedNode>,
}

/// Layout of a generated deployment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutSpec {
    pub scenario: Scenario,
    pub transmitters: usize,
    /// Broadcast only: total number of network nodes.
    pub nodes: usize,
    pub region: Cylinder,
    pub placement_radius_m: f64,
    pub battery_j: f64,
    pub interferer_power_w: Option<f64>,
}

impl Deployment {
    /// Transmitters evenly spaced on a ring at the bottom of the region,
    /// receivers at the top.
    ///
    /// Unicast: receiver `i` sits directly above transmitter `i`. Broadcast:
    /// the remaining nodes form a second ring at the top, rotated half a step,
    /// and every transmitter addresses all other network nodes.
    pub fn standard(spec: &LayoutSpec) -> Self {
        let n_tx = spec.transmitters;
        let ring = |i: usize, n: usize, offset: f64, z: f64| {
            let a = std::f64::consts::TAU * (i as f64 + offset) / n as f64;
            [spec.placement_radius_m * a.cos(), spec.placement_radius_m * a.sin(), z]
        };
        let top = spec.region.height_m;
        let mut nodes = Vec::new();
        match spec.scenario {
            Scenario::Unicast => {
                for i in 0..n_tx {
                    nodes.push(DeployedNode {
                        id: i,
                        role: NodeRole::Transmitter {
                            receivers: vec![n_tx + i],
                        },
                        position: ring(i, n_tx, 0.0, 0.0),
                        battery_j: spec.battery_j,
                    });
                }
                for i in 0..n_tx {
                    nodes.push(DeployedNode {
                        id: n_tx + i,
                        role: NodeRole::Receiver,
                        position: ring(i, n_tx, 0.0, top),
                        battery_j: spec.battery_j,
                    });
                }
            }
            Scenario::Broadcast => {
                let total = spec.nodes.max(n_tx + 1);
                let n_rx = total - n_tx;
                for i in 0..n_tx {
                    nodes.push(DeployedNode {
                        id: i,
                        role: NodeRole::Transmitter {
                            receivers: (0..total).filter(|&j| j != i).collect(),
                        },
                        position: ring(i, n_tx, 0.0, 0.0),
                        battery_j: spec.battery_j,
                    });
                }
                for j in 0..n_rx {
                    nodes.push(DeployedNode {
                        id: n_tx + j,
                        role: NodeRole::Receiver,
                        position: ring(j, n_rx, 0.5, top),
                        battery_j: spec.battery_j,
                    });
                }
            }
        }
        if let Some(power_w) = spec.interferer_power_w {
            let id = nodes.len();
            nodes.push(DeployedNode {
                id,
                role: NodeRole::ExternalInterferer { power_w },
                position: [spec.region.radius_m, 0.0, top / 2.0],
                battery_j: 0.0,
            });
        }
        Deployment {
            format: DEPLOYMENT_FORMAT,
            scenario: spec.scenario,
            region: spec.region,
            nodes,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Deployment(m));
        if self.format != DEPLOYMENT_FORMAT {
            return bad(format!("unsupported format {}", self.format));
        }
        if self.region.radius_m <= 0.0 || self.region.height_m <= 0.0 {
            return bad("region must have positive radius and height".into());
        }
        let n = self.nodes.len();
        let mut n_tx = 0;
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.id != idx {
                return bad(format!("node ids must be 0..{n} in order, found {} at {idx}", node.id));
            }
            if !node.position.iter().all(|v| v.is_finite()) {
                return bad(format!("node {} has a non-finite position", node.id));
            }
            match &node.role {
                NodeRole::Transmitter { receivers } => {
                    n_tx += 1;
                    if receivers.is_empty() {
                        return bad(format!("transmitter {} has no receivers", node.id));
                    }
                    if !(node.battery_j > 0.0) {
                        return bad(format!("transmitter {} needs a positive battery", node.id));
                    }
                    for &r in receivers {
                        if r >= n || r == node.id {
                            return bad(format!("transmitter {} addresses invalid receiver {r}", node.id));
                        }
                        if matches!(self.nodes[r].role, NodeRole::ExternalInterferer { .. }) {
                            return bad(format!("transmitter {} addresses external entity {r}", node.id));
                        }
                    }
                    if self.scenario == Scenario::Unicast && receivers.len() != 1 {
                        return bad(format!("unicast transmitter {} must have exactly one receiver", node.id));
                    }
                }
                NodeRole::ExternalInterferer { power_w } if !(*power_w >= 0.0) => {
                    return bad(format!("external entity {} has invalid power", node.id));
                }
                _ => {}
            }
        }
        if n_tx == 0 {
            return bad("no transmitters".into());
        }
        Ok(())
    }

    pub fn to_world(&self) -> Result<WorldState, WorldError> {
        self.validate()?;
        Ok(WorldState {
            nodes: self
                .nodes
                .iter()
                .map(|d| NodeState {
                    id: d.id,
                    position: d.position,
                    battery_j: d.battery_j,
                    energy_used_j: 0.0,
                    malfunction: false,
                    malfunction_onset_slot: None,
                    role: d.role.clone(),
                    track: None,
                })
                .collect(),
            slot: 0,
        })
    }

    pub fn from_json_reader<R: Read>(r: R) -> Result<Self, WorldError> {
        let d: Deployment = serde_json::from_reader(r)?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_json_writer<W: Write>(&self, w: W) -> Result<(), WorldError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Episode trace as CSV: one row per scheduled (slot, tx, rx) link.
pub fn write_trace_csv<W: Write>(outcomes: &[SlotOutcome], w: W) -> Result<(), WorldError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["slot", "tx", "rx", "power_w", "sinr_db", "received"])?;
    for o in outcomes {
        for l in &o.links {
            let db = if l.sinr > 0.0 {
                format!("{:.6}", acoustics::linear_to_db(l.sinr))
            } else {
                "-inf".to_string()
            };
            out.write_record([
                o.slot.to_string(),
                l.tx.to_string(),
                l.rx.to_string(),
                format!("{:.3}", l.power_w),
                db,
                u8::from(l.received).to_string(),
            ])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::NoiseConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unicast(n: usize, interferer: bool) -> WorldState {
        Deployment::standard(&LayoutSpec {
            scenario: Scenario::Unicast,
            transmitters: n,
            nodes: 2 * n,
            region: Cylinder::default(),
            placement_radius_m: 3500.0,
            battery_j: 5000.0,
            interferer_power_w: interferer.then_some(4.0),
        })
        .to_world()
        .unwrap()
    }

    fn link() -> LinkParams {
        LinkParams::new(
            ChannelParams {
                ambient_noise: NoiseConfig::ConstantPower { watts: 1e-9 },
                ..ChannelParams::default()
            },
            10.0,
            3.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_motion_keeps_positions() {
        let w = unicast(3, false);
        let cfg = MobilityConfig {
            current_speed_mps: 0.0,
            drift_direction_deg: 0.0,
            jitter_std_mps: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = step_mobility(&w, &cfg, &Cylinder::default(), 8.0, 30, &mut rng);
        for (a, b) in w.nodes.iter().zip(&next.nodes) {
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn drift_displacement_is_speed_times_slot() {
        let mut w = unicast(1, false);
        w.nodes[0].position = [0.0, 0.0, 500.0];
        let cfg = MobilityConfig {
            current_speed_mps: 0.5,
            drift_direction_deg: 30.0,
            jitter_std_mps: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = step_mobility(&w, &cfg, &Cylinder::default(), 8.0, 30, &mut rng);
        let d = acoustics::distance(&w.nodes[0].position, &next.nodes[0].position);
        assert!((d - 4.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn jittered_nodes_stay_inside() {
        let region = Cylinder::default();
        let mut w = unicast(5, true);
        let cfg = MobilityConfig {
            current_speed_mps: 2.0,
            drift_direction_deg: 10.0,
            jitter_std_mps: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        w = sample_tracks(&w, &region, &mut rng);
        for _ in 0..10_000 {
            w = step_mobility(&w, &cfg, &region, 8.0, 30, &mut rng);
            assert!(w.nodes.iter().all(|n| region.contains(&n.position)));
            w.slot = (w.slot + 1) % 30;
        }
    }

    #[test]
    fn malfunction_extremes() {
        let w = unicast(10, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let none = apply_malfunctions(&w, 0.0, 30, &mut rng);
        let none = activate_malfunctions(&none, 30);
        assert!(none.nodes.iter().all(|n| !n.malfunction));
        let all = apply_malfunctions(&w, 1.0, 30, &mut rng);
        for n in all.transmitters() {
            let onset = n.malfunction_onset_slot.unwrap();
            assert!((1..=30).contains(&onset));
            assert!(!n.malfunction);
        }
        let all = activate_malfunctions(&all, 30);
        assert!(all.transmitters().all(|n| n.malfunction));
    }

    #[test]
    fn malfunction_frequency_matches_rate() {
        let w = unicast(10, false);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0usize;
        let episodes = 10_000;
        for _ in 0..episodes {
            let m = apply_malfunctions(&w, 0.4, 30, &mut rng);
            hits += m.transmitters().filter(|n| n.malfunction_onset_slot.is_some()).count();
        }
        let freq = hits as f64 / (episodes * 10) as f64;
        assert!((freq - 0.4).abs() < 0.02, "{freq}");
    }

    #[test]
    fn malfunction_is_monotone() {
        let w = unicast(4, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = apply_malfunctions(&w, 0.7, 30, &mut rng);
        let mut prev = vec![false; s.nodes.len()];
        for t in 1..=30 {
            s = activate_malfunctions(&s, t);
            for (i, n) in s.nodes.iter().enumerate() {
                assert!(!prev[i] || n.malfunction);
                prev[i] = n.malfunction;
            }
        }
    }

    #[test]
    fn single_sender_succeeds_and_pays() {
        let w = unicast(3, false);
        let lp = link();
        let joint = BTreeMap::from([(0, 64.0)]);
        let (o, next) = resolve_slot(&w, &joint, &lp).unwrap();
        assert_eq!(o.links.len(), 1);
        let l = &o.links[0];
        assert!(l.received);
        // oracle: 64 / A(1000 m) over 1e-9 W of noise
        let a = acoustics::attenuation(LinkGeometry::new(1000.0).unwrap(), &lp.channel);
        assert!((l.sinr - 64.0 / a / 1e-9).abs() / l.sinr < 1e-9);
        assert_eq!(next.nodes[0].energy_used_j, 192.0);
        assert_eq!(next.nodes[1].energy_used_j, 0.0);
        assert_eq!(next.slot, 1);
    }

    #[test]
    fn all_zero_powers() {
        let w = unicast(3, true);
        let (o, next) = resolve_slot(&w, &BTreeMap::new(), &link()).unwrap();
        assert!(o.links.is_empty());
        assert_eq!(o.transmitters.len(), 3);
        assert!(next.nodes.iter().all(|n| n.energy_used_j == 0.0));
    }

    #[test]
    fn receiver_cannot_send() {
        let w = unicast(2, false);
        let joint = BTreeMap::from([(0, 8.0), (2, 8.0)]);
        assert!(matches!(
            resolve_slot(&w, &joint, &link()),
            Err(WorldError::NotATransmitter { id: 2, .. })
        ));
        let joint = BTreeMap::from([(9, 8.0)]);
        assert!(matches!(resolve_slot(&w, &joint, &link()), Err(WorldError::UnknownNode(9))));
    }

    #[test]
    fn broadcast_senders_leave_receiver_sets() {
        let w = Deployment::standard(&LayoutSpec {
            scenario: Scenario::Broadcast,
            transmitters: 3,
            nodes: 6,
            region: Cylinder::default(),
            placement_radius_m: 3000.0,
            battery_j: 5000.0,
            interferer_power_w: None,
        })
        .to_world()
        .unwrap();
        let joint = BTreeMap::from([(0, 16.0), (1, 16.0)]);
        let (o, _) = resolve_slot(&w, &joint, &link()).unwrap();
        let senders = o.sends();
        for l in &o.links {
            assert!(!senders.contains_key(&l.rx));
        }
        assert_eq!(o.transmitters[0].receivers.len(), 4);
        assert_eq!(o.transmitters[2].receivers.len(), 3);
    }

    #[test]
    fn lifetime_ledger() {
        let w = unicast(2, false);
        let lp = link();
        let mut history = vec![w.clone()];
        let mut s = w;
        for _ in 0..30 {
            let joint = BTreeMap::from([(0, 64.0)]);
            s = resolve_slot(&s, &joint, &lp).unwrap().1;
            history.push(s.clone());
        }
        // 4500 / 192 = 23.4: residual drops under 500 J during slot 24
        let lt = network_lifetime(&history, 30, 0.1);
        assert_eq!(lt, Lifetime { slots: 23, degenerate: false });
        assert!(service_ended(&history[23].nodes[0], &history[24].nodes[0], 0.1));

        let quiet: Vec<WorldState> = vec![history[0].clone(); 31];
        assert_eq!(network_lifetime(&quiet, 30, 0.1).slots, 30);

        let mut broken = history[0].clone();
        for n in broken.nodes.iter_mut().filter(|n| n.is_transmitter()) {
            n.malfunction = true;
        }
        let lt = network_lifetime(&[broken.clone(), broken], 30, 0.1);
        assert_eq!(lt, Lifetime { slots: 30, degenerate: true });
    }

    #[test]
    fn deployment_json_roundtrip_and_validation() {
        let d = Deployment::standard(&LayoutSpec {
            scenario: Scenario::Unicast,
            transmitters: 3,
            nodes: 6,
            region: Cylinder::default(),
            placement_radius_m: 3500.0,
            battery_j: 5000.0,
            interferer_power_w: Some(4.0),
        });
        let mut buf = Vec::new();
        d.to_json_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"format\": 1"));
        let back = Deployment::from_json_reader(buf.as_slice()).unwrap();
        assert_eq!(back, d);

        let mut bad = d.clone();
        bad.format = 2;
        assert!(bad.validate().is_err());
        let mut bad = d.clone();
        bad.nodes[0].role = NodeRole::Transmitter { receivers: vec![] };
        assert!(bad.validate().is_err());
        let mut bad = d;
        bad.nodes[1].role = NodeRole::Transmitter { receivers: vec![6] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trace_csv_has_one_row_per_link() {
        let w = unicast(3, false);
        let joint = BTreeMap::from([(0, 8.0), (1, 8.0)]);
        let (o, _) = resolve_slot(&w, &joint, &link()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&[o], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("slot,tx,rx,power_w,sinr_db,received"));
    }
}
