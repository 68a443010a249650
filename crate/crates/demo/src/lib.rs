//! Browser demo: link budget curves, baseline episode playback and the
//! malfunction-rate curriculum. Every export returns JSON so the page needs
//! no bindings beyond strings and numbers.

use serde::Serialize;
use uwsn::acoustics::{ambient_noise_power, attenuation, db_to_linear, linear_to_db, ChannelParams, LinkGeometry};
use uwsn::baselines::{BaselineKind, BaselinePolicy};
use uwsn::curriculum::{adjust_epsilon, CurriculumState};
use uwsn::env::{Env, MalfunctionBehavior, ScenarioConfig};
use uwsn::metrics::MetricsReport;
use uwsn::world::{NodeRole, SlotOutcome};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Serialize)]
pub struct LinkCurve {
    pub distance_m: Vec<f64>,
    pub attenuation_db: Vec<f64>,
    /// Noise-limited SNR of a lone sender at `power_w`.
    pub snr_db: Vec<f64>,
    pub ambient_noise_db: f64,
    pub threshold_db: f64,
    /// Longest sampled distance that still clears the threshold.
    pub max_range_m: Option<f64>,
}

/// Attenuation and noise-limited SNR over `points` distances up to `max_m`.
pub fn link_curve(power_w: f64, carrier_khz: f64, max_m: f64, points: usize, threshold_db: f64) -> Result<LinkCurve, String> {
    let ch = ChannelParams {
        carrier_freq_khz: carrier_khz,
        ..ChannelParams::default()
    };
    ch.validate().map_err(|e| e.to_string())?;
    if !(power_w > 0.0 && max_m > 0.0 && points >= 2) {
        return Err("power and range must be positive with at least two points".into());
    }
    let noise = ambient_noise_power(&ch);
    let mut curve = LinkCurve {
        distance_m: Vec::with_capacity(points),
        attenuation_db: Vec::with_capacity(points),
        snr_db: Vec::with_capacity(points),
        ambient_noise_db: linear_to_db(noise),
        threshold_db,
        max_range_m: None,
    };
    for i in 1..=points {
        let d = max_m * i as f64 / points as f64;
        let a = attenuation(LinkGeometry::new(d).map_err(|e| e.to_string())?, &ch);
        let snr = ch.transducer_eff * power_w / a / noise;
        curve.distance_m.push(d);
        curve.attenuation_db.push(linear_to_db(a));
        curve.snr_db.push(linear_to_db(snr));
        if snr >= db_to_linear(threshold_db) {
            curve.max_range_m = Some(d);
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeView {
    pub id: usize,
    pub kind: &'static str,
    pub position: [f64; 3],
    pub malfunction: bool,
    pub residual_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    pub nodes: Vec<NodeView>,
    pub outcome: SlotOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct Playback {
    pub policy: String,
    pub region_radius_m: f64,
    pub region_height_m: f64,
    pub frames: Vec<Frame>,
    pub reward: f64,
    pub metrics: MetricsReport,
}

fn parse_policy(name: &str) -> Result<BaselineKind, String> {
    BaselineKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| format!("unknown policy {name}; expected epa, olpa, rpa or solpa"))
}

/// One seeded unicast episode driven by a baseline policy. Malfunctioning
/// nodes pick random powers.
pub fn play_episode(policy: &str, transmitters: usize, epsilon: f64, seed: u64) -> Result<Playback, String> {
    let kind = parse_policy(policy)?;
    let cfg = ScenarioConfig {
        transmitters,
        epsilon,
        ..ScenarioConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let mut env = Env::from_config(&cfg).map_err(|e| e.to_string())?;
    let mut p = BaselinePolicy::new(kind);
    let result = env
        .run_episode(&mut p, seed, epsilon, MalfunctionBehavior::Random)
        .map_err(|e| e.to_string())?;
    let frames = env
        .history()
        .iter()
        .zip(env.outcomes())
        .map(|(world, outcome)| Frame {
            nodes: world
                .nodes
                .iter()
                .map(|n| NodeView {
                    id: n.id,
                    kind: match n.role {
                        NodeRole::Transmitter { .. } => "transmitter",
                        NodeRole::Receiver => "receiver",
                        NodeRole::ExternalInterferer { .. } => "interferer",
                    },
                    position: n.position,
                    malfunction: n.malfunction,
                    residual_ratio: n.residual_ratio(),
                })
                .collect(),
            outcome: outcome.clone(),
        })
        .collect();
    Ok(Playback {
        policy: kind.name().into(),
        region_radius_m: cfg.region.radius_m,
        region_height_m: cfg.region.height_m,
        frames,
        reward: result.reward,
        metrics: result.report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub epsilon: Vec<f64>,
    pub evaluations_to_cap: Option<usize>,
}

/// ε after each evaluation when the observed mean utilities are
/// `utilities`, starting from 0.
pub fn curriculum_trajectory(u_th: f64, gamma_lf: f64, epsilon_max: f64, utilities: &[f64]) -> Result<Trajectory, String> {
    let mut state = CurriculumState::new(u_th, gamma_lf, epsilon_max).map_err(|e| e.to_string())?;
    let mut epsilon = Vec::with_capacity(utilities.len() + 1);
    epsilon.push(state.epsilon);
    let mut cap = None;
    for (i, &u) in utilities.iter().enumerate() {
        state = adjust_epsilon(&state, u);
        epsilon.push(state.epsilon);
        if cap.is_none() && state.epsilon >= epsilon_max {
            cap = Some(i + 1);
        }
    }
    Ok(Trajectory {
        epsilon,
        evaluations_to_cap: cap,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = linkCurve)]
pub fn link_curve_js(power_w: f64, carrier_khz: f64, max_m: f64, points: usize, threshold_db: f64) -> Result<String, JsError> {
    to_js(link_curve(power_w, carrier_khz, max_m, points, threshold_db))
}

#[wasm_bindgen(js_name = playEpisode)]
pub fn play_episode_js(policy: &str, transmitters: usize, epsilon: f64, seed: u32) -> Result<String, JsError> {
    to_js(play_episode(policy, transmitters, epsilon, seed as u64))
}

#[wasm_bindgen(js_name = curriculumTrajectory)]
pub fn curriculum_trajectory_js(u_th: f64, gamma_lf: f64, epsilon_max: f64, utilities: &[f64]) -> Result<String, JsError> {
    to_js(curriculum_trajectory(u_th, gamma_lf, epsilon_max, utilities))
}
