use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::buffer::{EpisodeRecord, ReplayBuffer, Transition};
use super::policy::{td_target, QPolicy};
use crate::env::{derive_seed, evaluate, AgentStatus, Env, EnvError, EpisodeResult, Policy};
use crate::neural::{Adam, AdamConfig, InitScheme, NetParams, NetShape};

const STREAM_ENV: u64 = 1;
const STREAM_POLICY: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_REPLAY: u64 = 5;

/// Linear exploration decay from `start` to `end` over the first
/// `decay_fraction` of training, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl ExplorationSchedule {
    /// Exploration rate for 1-based `episode` out of `total`.
    pub fn value(&self, episode: usize, total: usize) -> f64 {
        let span = self.decay_fraction * total as f64;
        if span <= 0.0 {
            return self.end;
        }
        let frac = episode.saturating_sub(1) as f64 / span;
        if frac >= 1.0 {
            self.end
        } else {
            self.start + (self.end - self.start) * frac
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub episodes: usize,
    /// Target network sync period in episodes.
    pub target_update_period: usize,
    pub gamma: f64,
    /// Episodes per gradient step.
    pub batch_episodes: usize,
    pub buffer_capacity: usize,
    pub eval_period: usize,
    pub eval_runs: usize,
    pub exploration: ExplorationSchedule,
    pub optimizer: AdamConfig,
    pub init: InitScheme,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            target_update_period: 200,
            gamma: 0.99,
            batch_episodes: 32,
            buffer_capacity: 10_000,
            eval_period: 200,
            eval_runs: 20,
            exploration: ExplorationSchedule::default(),
            optimizer: AdamConfig::default(),
            init: InitScheme::FanInUniform,
            grad_clip_norm: Some(10.0),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if self.target_update_period == 0 {
            return bad("target_update_period must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.batch_episodes == 0 {
            return bad("batch_episodes must be at least 1");
        }
        if self.eval_period == 0 || self.eval_runs == 0 {
            return bad("eval_period and eval_runs must be at least 1");
        }
        let e = &self.exploration;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || !(e.decay_fraction >= 0.0) {
            return bad("exploration rates must be in [0, 1] and decay_fraction non-negative");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("optimizer.learning_rate must be positive");
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return bad("grad_clip_norm must be positive");
            }
        }
        Ok(())
    }
}

/// Sets the malfunction rate of training episodes and reacts to periodic
/// evaluations.
pub trait CurriculumHook {
    fn epsilon(&self) -> f64;
    fn on_evaluation(&mut self, episode: usize, mean_utility: f64);
}

/// Constant malfunction rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedEpsilon(pub f64);

impl CurriculumHook for FixedEpsilon {
    fn epsilon(&self) -> f64 {
        self.0
    }

    fn on_evaluation(&mut self, _: usize, _: f64) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub epsilon_malfunction: f64,
    pub mean_eval_reward: Option<f64>,
    pub loss: Option<f64>,
    pub buffer_fill: usize,
}

pub const LOG_HEADER: [&str; 5] = ["episode", "epsilon_malfunction", "mean_eval_reward", "loss", "buffer_fill"];

pub fn write_training_log<W: Write>(rows: &[LogRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LOG_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.episode.to_string(),
            format!("{:.6}", r.epsilon_malfunction),
            opt(r.mean_eval_reward),
            opt(r.loss),
            r.buffer_fill.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub episode: usize,
    pub epsilon_malfunction: f64,
    pub mean_eval_reward: f64,
    pub mean_eval_utility: f64,
    pub params: Arc<NetParams<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub episode: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub param_norm: f64,
    pub batch_episodes: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite loss at episode {}: loss {}, gradient norm {}", .0.episode, .0.loss, .0.grad_norm)]
    NonFiniteLoss(Box<Diagnostics>),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model chosen by [`select_final_model`].
    pub selected: Snapshot,
    pub final_params: NetParams<f32>,
    pub snapshots: Vec<Snapshot>,
    pub log: Vec<LogRow>,
}

/// Network shape for an environment.
pub fn net_shape(env: &Env) -> NetShape {
    NetShape::new(env.encoder().width(), env.action_space().len())
}

/// Evaluation seeds shared by every evaluation point of a run.
pub fn eval_seeds(seed: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| derive_seed(seed, STREAM_EVAL, i)).collect()
}

/// Greedy episodes at the hook's current malfunction rate with the training
/// malfunction behaviour.
pub fn evaluate_greedy(
    env: &Env,
    params: &Arc<NetParams<f32>>,
    seeds: &[u64],
    epsilon: f64,
) -> Result<Vec<EpisodeResult>, EnvError> {
    let policy = QPolicy::greedy(params.clone());
    evaluate(env, &policy, seeds, epsilon, env.config().malfunction.training)
}

/// Picks the snapshot with the best mean evaluation reward among those taken
/// at or after the first episode with the highest training malfunction rate.
pub fn select_final_model<'a>(snapshots: &'a [Snapshot], log: &[LogRow]) -> Option<&'a Snapshot> {
    let mut peak: Option<(usize, f64)> = None;
    for r in log {
        if peak.is_none_or(|(_, e)| r.epsilon_malfunction > e) {
            peak = Some((r.episode, r.epsilon_malfunction));
        }
    }
    let from = peak.map_or(0, |(e, _)| e);
    let mut best: Option<&Snapshot> = None;
    for s in snapshots.iter().filter(|s| s.episode >= from) {
        if best.is_none_or(|b| s.mean_eval_reward > b.mean_eval_reward) {
            best = Some(s);
        }
    }
    best.or(snapshots.last())
}

/// Recurrent VDN Q-learning with experience replay and a target network.
pub fn train(
    env: &Env,
    cfg: &TrainerConfig,
    hook: &mut dyn CurriculumHook,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut env = env.clone();
    let shape = net_shape(&env);
    let mut params = NetParams::<f32>::init(
        shape,
        cfg.init,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT, 0)),
    );
    let mut target = Arc::new(params.clone());
    let mut adam = Adam::new(params.data.len(), cfg.optimizer);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut replay_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_REPLAY, 0));
    let seeds = eval_seeds(seed, cfg.eval_runs);
    let behavior = env.config().malfunction.training;
    let n = env.n_agents();

    let mut log = Vec::with_capacity(cfg.episodes);
    let mut snapshots = Vec::new();
    for episode in 1..=cfg.episodes {
        let eps_mal = hook.epsilon();
        let mut policy = QPolicy::new(Arc::new(params.clone()), cfg.exploration.value(episode, cfg.episodes));
        let mut obs = env.reset(derive_seed(seed, STREAM_ENV, episode as u64), eps_mal, behavior);
        policy.begin_episode(&env, derive_seed(seed, STREAM_POLICY, episode as u64));
        let mut record = EpisodeRecord {
            id: episode as u64,
            transitions: Vec::new(),
        };
        let mut active: Vec<bool> = (0..n).map(|a| env.status(a) == AgentStatus::Active).collect();
        while !env.is_done() {
            let choice = policy.choose(&env, &obs);
            let feats = policy.last_features().to_vec();
            let proposed: Vec<f64> = choice.iter().map(|&a| env.action_space().power(a)).collect();
            let step = env.step(&proposed)?;
            let next_active: Vec<bool> = (0..n).map(|a| env.status(a) == AgentStatus::Active).collect();
            let mut next_feats = Vec::with_capacity(feats.len());
            for o in &step.observations {
                env.encoder().encode_into(o, &mut next_feats);
            }
            let actions = step
                .executed
                .iter()
                .map(|&p| env.action_space().index_of(p).expect("executed power is a level") as u8)
                .collect();
            record.transitions.push(Transition {
                episode: episode as u64,
                slot: step.outcome.slot,
                obs: feats,
                actions,
                active: active.clone(),
                reward: step.reward,
                next_obs: next_feats,
                next_active: next_active.clone(),
                terminal: step.terminal,
            });
            active = next_active;
            obs = step.observations;
        }
        buffer.push(record);

        let mut loss = None;
        if let Some(batch) = buffer.sample(cfg.batch_episodes, &mut replay_rng) {
            let (l, mut grad) = vdn_loss_grad(&params, &target, &batch, n, cfg.gamma);
            let grad_norm = grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
            if !l.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::NonFiniteLoss(Box::new(Diagnostics {
                    episode,
                    loss: l,
                    grad_norm,
                    param_norm: params.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt(),
                    batch_episodes: batch.iter().map(|e| e.id).collect(),
                })));
            }
            if let Some(clip) = cfg.grad_clip_norm {
                if grad_norm > clip {
                    let s = (clip / grad_norm) as f32;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam.step(&mut params.data, &grad);
            loss = Some(l);
        }

        if episode % cfg.target_update_period == 0 {
            target = Arc::new(params.clone());
        }

        let mut mean_eval_reward = None;
        if episode % cfg.eval_period == 0 || episode == cfg.episodes {
            let snap = Arc::new(params.clone());
            let results = evaluate_greedy(&env, &snap, &seeds, eps_mal)?;
            let k = results.len() as f64;
            let reward = results.iter().map(|r| r.reward).sum::<f64>() / k;
            let utility = results.iter().map(|r| r.report.utility).sum::<f64>() / k;
            snapshots.push(Snapshot {
                episode,
                epsilon_malfunction: eps_mal,
                mean_eval_reward: reward,
                mean_eval_utility: utility,
                params: snap,
            });
            hook.on_evaluation(episode, utility);
            mean_eval_reward = Some(reward);
        }
        log.push(LogRow {
            episode,
            epsilon_malfunction: eps_mal,
            mean_eval_reward,
            loss,
            buffer_fill: buffer.fill(),
        });
    }

    let selected = select_final_model(&snapshots, &log).expect("at least one snapshot").clone();
    Ok(TrainOutcome {
        selected,
        final_params: params,
        snapshots,
        log,
    })
}

/// Mean squared TD error of the summed team value over all valid slots of
/// `batch`, and its gradient with respect to `online`.
pub fn vdn_loss_grad(
    online: &NetParams<f32>,
    target: &NetParams<f32>,
    batch: &[&EpisodeRecord],
    n_agents: usize,
    gamma: f64,
) -> (f64, Vec<f32>) {
    let width = online.shape.input;
    let k = online.shape.outputs;
    let steps = batch.iter().map(|e| e.len()).max().unwrap_or(0);
    let rows = batch.len() * n_agents;
    // Time-major: row (t, e·n + i); step `steps` holds the final next-observation.
    let mut x = vec![0.0f32; (steps + 1) * rows * width];
    for (e, ep) in batch.iter().enumerate() {
        for (t, tr) in ep.transitions.iter().enumerate() {
            let at = (t * rows + e * n_agents) * width;
            x[at..at + n_agents * width].copy_from_slice(&tr.obs);
            if t + 1 == ep.len() {
                let at = ((t + 1) * rows + e * n_agents) * width;
                x[at..at + n_agents * width].copy_from_slice(&tr.next_obs);
            }
        }
    }
    let online_cache = online
        .forward_seq(&x[..steps * rows * width], steps, rows)
        .expect("batch width matches network");
    let target_cache = target.forward_seq(&x, steps + 1, rows).expect("batch width matches network");

    let valid: usize = batch
        .iter()
        .flat_map(|e| &e.transitions)
        .filter(|t| t.active.iter().any(|&a| a))
        .count();
    let mut dq = vec![0.0f32; steps * rows * k];
    let mut loss = 0.0;
    if valid == 0 {
        return (0.0, vec![0.0; online.data.len()]);
    }
    let scale = 1.0 / valid as f64;
    for (e, ep) in batch.iter().enumerate() {
        for (t, tr) in ep.transitions.iter().enumerate() {
            if !tr.active.iter().any(|&a| a) {
                continue;
            }
            let mut q_tot = 0.0;
            for i in 0..n_agents {
                if tr.active[i] {
                    q_tot += online_cache.q_row(t, e * n_agents + i)[tr.actions[i] as usize] as f64;
                }
            }
            let next_max: Vec<f64> = (0..n_agents)
                .filter(|&i| tr.next_active[i])
                .map(|i| {
                    target_cache
                        .q_row(t + 1, e * n_agents + i)
                        .iter()
                        .fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64
                })
                .collect();
            let y = td_target(tr.reward, tr.terminal, gamma, &next_max);
            let err = y - q_tot;
            loss += err * err * scale;
            let g = (-2.0 * err * scale) as f32;
            for i in 0..n_agents {
                if tr.active[i] {
                    let row = t * rows + e * n_agents + i;
                    dq[row * k + tr.actions[i] as usize] = g;
                }
            }
        }
    }
    let mut grad = vec![0.0f32; online.data.len()];
    online.backward_seq(&online_cache, &dq, &mut grad);
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ScenarioConfig;

    fn snap(episode: usize, reward: f64) -> Snapshot {
        Snapshot {
            episode,
            epsilon_malfunction: 0.0,
            mean_eval_reward: reward,
            mean_eval_utility: 0.0,
            params: Arc::new(NetParams::zeros(NetShape::new(1, 7))),
        }
    }

    fn row(episode: usize, eps: f64) -> LogRow {
        LogRow {
            episode,
            epsilon_malfunction: eps,
            mean_eval_reward: None,
            loss: None,
            buffer_fill: 0,
        }
    }

    #[test]
    fn final_model_selection() {
        let snaps = [snap(400, 5.0), snap(800, 3.0)];
        let log: Vec<LogRow> = (1..=800)
            .map(|e| row(e, if e < 600 { 0.1 } else if e == 600 { 0.5 } else { 0.3 }))
            .collect();
        assert_eq!(select_final_model(&snaps, &log).unwrap().episode, 800);

        let flat: Vec<LogRow> = (1..=800).map(|e| row(e, 0.2)).collect();
        assert_eq!(select_final_model(&snaps, &flat).unwrap().episode, 400);
        assert_eq!(select_final_model(&snaps[1..], &flat).unwrap().episode, 800);
    }

    #[test]
    fn exploration_schedule() {
        let s = ExplorationSchedule::default();
        assert_eq!(s.value(1, 1000), 1.0);
        assert!((s.value(251, 1000) - 0.525).abs() < 1e-12);
        assert!((s.value(501, 1000) - 0.05).abs() < 1e-12);
        assert_eq!(s.value(1000, 1000), 0.05);
    }

    fn tiny_env() -> Env {
        Env::from_config(&ScenarioConfig {
            transmitters: 2,
            ..ScenarioConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn single_episode_has_no_update() {
        let cfg = TrainerConfig {
            episodes: 1,
            eval_runs: 2,
            ..TrainerConfig::default()
        };
        let out = train(&tiny_env(), &cfg, &mut FixedEpsilon(0.0), 1).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].loss, None);
        assert_eq!(out.snapshots.len(), 1);
        assert_eq!(out.log[0].buffer_fill, 30);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainerConfig {
            episodes: 40,
            batch_episodes: 4,
            eval_period: 20,
            eval_runs: 3,
            target_update_period: 10,
            ..TrainerConfig::default()
        };
        let run = || {
            let out = train(&tiny_env(), &cfg, &mut FixedEpsilon(0.3), 9).unwrap();
            let mut buf = Vec::new();
            write_training_log(&out.log, &mut buf).unwrap();
            (buf, out.final_params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 41);
        assert!(text.starts_with("episode,epsilon_malfunction,mean_eval_reward,loss,buffer_fill\n"));
    }

    #[test]
    fn small_steps_reduce_the_loss() {
        let env = tiny_env();
        let cfg = TrainerConfig {
            episodes: 8,
            batch_episodes: 4,
            eval_runs: 1,
            ..TrainerConfig::default()
        };
        let out = train(&env, &cfg, &mut FixedEpsilon(0.0), 3).unwrap();
        let mut buffer = ReplayBuffer::new(10_000);
        let mut env2 = env.clone();
        for ep in 0..4 {
            let mut obs = env2.reset(ep, 0.0, crate::env::MalfunctionBehavior::Silent);
            let mut pol = QPolicy::new(Arc::new(out.final_params.clone()), 1.0);
            pol.begin_episode(&env2, ep);
            let mut rec = EpisodeRecord { id: ep, transitions: vec![] };
            while !env2.is_done() {
                let a = pol.choose(&env2, &obs);
                let f = pol.last_features().to_vec();
                let p: Vec<f64> = a.iter().map(|&i| env2.action_space().power(i)).collect();
                let s = env2.step(&p).unwrap();
                let mut nf = Vec::new();
                for o in &s.observations {
                    env2.encoder().encode_into(o, &mut nf);
                }
                rec.transitions.push(Transition {
                    episode: ep,
                    slot: s.outcome.slot,
                    obs: f,
                    actions: s.executed.iter().map(|&w| env2.action_space().index_of(w).unwrap() as u8).collect(),
                    active: vec![true; 2],
                    reward: s.reward,
                    next_obs: nf,
                    next_active: vec![true; 2],
                    terminal: s.terminal,
                });
                obs = s.observations;
            }
            buffer.push(rec);
        }
        let batch: Vec<&EpisodeRecord> = buffer.iter().collect();
        let online = out.final_params.clone();
        let target = online.clone();
        let (l0, g) = vdn_loss_grad(&online, &target, &batch, 2, 0.99);
        let mut stepped = online.clone();
        let norm = g.iter().map(|v| v * v).sum::<f32>().sqrt();
        for (p, gi) in stepped.data.iter_mut().zip(&g) {
            *p -= 1e-3 * gi / norm;
        }
        let (l1, _) = vdn_loss_grad(&stepped, &target, &batch, 2, 0.99);
        assert!(l1 < l0, "{l1} !< {l0}");
    }
}
