//! Malfunction-rate curriculum: performance evaluation drives a geometric
//! increase or decrease of the training malfunction rate, and a grid search
//! picks the threshold and learning factor.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineKind, BaselinePolicy};
use crate::env::{derive_seed, evaluate, Env, EnvError, Policy};
use crate::marl::{self, CurriculumHook, FixedEpsilon, QPolicy, TrainError, TrainerConfig};
use crate::neural::NetParams;

const STREAM_CALIBRATION: u64 = 11;
const STREAM_SWEEP_EVAL: u64 = 12;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("invalid curriculum setting: {0}")]
    Config(String),
    #[error("degenerate scenario: u_min {u_min} is not below u_max {u_max}")]
    DegenerateBounds { u_min: f64, u_max: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Malfunction-rate curriculum state. Also a [`CurriculumHook`] for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub epsilon: f64,
    pub epsilon_max: f64,
    pub u_th: f64,
    /// Learning factor Γ.
    pub gamma_lf: f64,
    /// `(episode, mean utility, ε after adjustment)` per evaluation.
    pub history: Vec<(usize, f64, f64)>,
}

impl CurriculumState {
    pub fn new(u_th: f64, gamma_lf: f64, epsilon_max: f64) -> Result<Self, CurriculumError> {
        if !(gamma_lf > 0.0 && gamma_lf < 1.0) {
            return Err(CurriculumError::Config(format!("learning factor {gamma_lf} must be in (0, 1)")));
        }
        if !(0.0..=1.0).contains(&epsilon_max) {
            return Err(CurriculumError::Config(format!("epsilon_max {epsilon_max} must be in [0, 1]")));
        }
        if u_th.is_nan() {
            return Err(CurriculumError::Config("u_th is NaN".into()));
        }
        Ok(Self {
            epsilon: 0.0,
            epsilon_max,
            u_th,
            gamma_lf,
            history: Vec::new(),
        })
    }
}

/// Raise ε toward 1 (capped at ε_max) when `mean_utility ≥ u_th`, otherwise
/// shrink it toward 0.
pub fn adjust_epsilon(state: &CurriculumState, mean_utility: f64) -> CurriculumState {
    let e = state.epsilon;
    let g = state.gamma_lf;
    let next = if mean_utility >= state.u_th {
        (e + g * (1.0 - e)).min(state.epsilon_max)
    } else {
        (e * (1.0 - g)).max(0.0)
    };
    CurriculumState {
        epsilon: next,
        ..state.clone()
    }
}

/// Evaluations needed for ε to climb from 0 to ε_max when every evaluation
/// clears the threshold.
pub fn evaluations_to_cap(gamma_lf: f64, epsilon_max: f64) -> usize {
    let mut e = 0.0;
    let mut k = 0;
    while e < epsilon_max {
        e = (e + gamma_lf * (1.0 - e)).min(epsilon_max);
        k += 1;
    }
    k
}

impl CurriculumHook for CurriculumState {
    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn on_evaluation(&mut self, episode: usize, mean_utility: f64) {
        *self = adjust_epsilon(self, mean_utility);
        self.history.push((episode, mean_utility, self.epsilon));
    }
}

/// Mean network utility of `policy` over one episode per seed.
pub fn evaluate_mean_utility<P: Policy + Clone + Send + Sync>(
    env: &Env,
    policy: &P,
    seeds: &[u64],
    epsilon: f64,
    behavior: crate::env::MalfunctionBehavior,
) -> Result<f64, CurriculumError> {
    if seeds.is_empty() {
        return Err(CurriculumError::Config("n_eva must be at least 1".into()));
    }
    let results = evaluate(env, policy, seeds, epsilon, behavior)?;
    Ok(results.iter().map(|r| r.report.utility).sum::<f64>() / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub u_min: f64,
    pub u_max: f64,
}

/// `u_max` from a model trained without malfunctions, `u_min` from random
/// power allocation, both on the malfunction-free environment.
pub fn calibrate_bounds(env: &Env, trainer: &TrainerConfig, seed: u64, n_eva: usize) -> Result<Bounds, CurriculumError> {
    let seeds = calibration_seeds(seed, n_eva);
    if seeds.is_empty() {
        return Err(CurriculumError::Config("n_eva must be at least 1".into()));
    }
    let behavior = env.config().malfunction.training;
    let trained = marl::train(env, trainer, &mut FixedEpsilon(0.0), seed)?;
    let u_max = evaluate_mean_utility(env, &QPolicy::greedy(trained.selected.params), &seeds, 0.0, behavior)?;
    let u_min = evaluate_mean_utility(env, &BaselinePolicy::new(BaselineKind::Rpa), &seeds, 0.0, behavior)?;
    if u_min >= u_max {
        return Err(CurriculumError::DegenerateBounds { u_min, u_max });
    }
    Ok(Bounds { u_min, u_max })
}

pub fn calibration_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(seed, STREAM_CALIBRATION, i)).collect()
}

/// Threshold grid `{u_min, u_min + Δu, …, u_max}` × learning factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub u_min: f64,
    pub u_max: f64,
    pub delta_u: f64,
    pub learning_factors: Vec<f64>,
}

impl GridSpec {
    /// `s ≥ 2` evenly spaced thresholds between the bounds.
    pub fn from_bounds(bounds: Bounds, s: usize, learning_factors: Vec<f64>) -> Result<Self, CurriculumError> {
        if s < 2 {
            return Err(CurriculumError::Config("a grid needs at least two thresholds".into()));
        }
        let g = Self {
            u_min: bounds.u_min,
            u_max: bounds.u_max,
            delta_u: (bounds.u_max - bounds.u_min) / (s - 1) as f64,
            learning_factors,
        };
        g.validate()?;
        Ok(g)
    }

    /// A single-cell grid.
    pub fn single(u_th: f64, gamma_lf: f64) -> Self {
        Self {
            u_min: u_th,
            u_max: u_th,
            delta_u: 0.0,
            learning_factors: vec![gamma_lf],
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        let s = self.steps();
        (0..s)
            .map(|i| if i + 1 == s { self.u_max } else { self.u_min + i as f64 * self.delta_u })
            .collect()
    }

    fn steps(&self) -> usize {
        if self.delta_u == 0.0 {
            1
        } else {
            ((self.u_max - self.u_min) / self.delta_u).round() as usize + 1
        }
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        let bad = |m: String| Err(CurriculumError::Config(m));
        if !(self.u_min.is_finite() && self.u_max.is_finite() && self.delta_u.is_finite()) {
            return bad("grid bounds must be finite".into());
        }
        if self.learning_factors.is_empty() {
            return bad("learning_factors is empty".into());
        }
        if let Some(g) = self.learning_factors.iter().find(|&&g| !(g > 0.0 && g < 1.0)) {
            return bad(format!("learning factor {g} must be in (0, 1)"));
        }
        if self.delta_u == 0.0 {
            if self.u_min != self.u_max {
                return bad("delta_u = 0 requires u_min = u_max".into());
            }
            return Ok(());
        }
        if !(self.delta_u > 0.0) || self.u_max < self.u_min {
            return bad("delta_u must be positive and u_max ≥ u_min".into());
        }
        let s = (self.u_max - self.u_min) / self.delta_u;
        if (s - s.round()).abs() > 1e-6 * s.max(1.0) {
            return bad(format!("u_max − u_min is not a whole number of delta_u steps ({s})"));
        }
        Ok(())
    }

    /// `(u_th, Γ)` cells, learning factor major.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let th = self.thresholds();
        self.learning_factors
            .iter()
            .flat_map(|&g| th.iter().map(move |&u| (u, g)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub seed: u64,
    pub epsilon_max: f64,
    /// Evaluation episodes per cell.
    pub n_eva: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub u_th: f64,
    pub gamma_lf: f64,
    pub status: CellStatus,
    /// Mean accumulated episode reward of the selected model.
    pub mean_reward: f64,
    pub mean_utility: f64,
    pub final_epsilon: f64,
    pub model: Option<Arc<NetParams<f32>>>,
    pub curriculum: Option<CurriculumState>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    /// Index of the best successful cell.
    pub best: Option<usize>,
    pub eval_seeds: Vec<u64>,
}

/// Seeds for cell evaluation in the target scenario.
pub fn sweep_eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(seed, STREAM_SWEEP_EVAL, i)).collect()
}

/// Trains one model per cell with the curriculum hook active, scores each by
/// its mean accumulated reward over `n_eva` episodes in the scenario's
/// evaluation setting, and returns all cells plus the argmax. Every cell
/// starts from the same seed; a failed cell is recorded and skipped.
pub fn grid_search(
    grid: &GridSpec,
    env: &Env,
    trainer: &TrainerConfig,
    settings: &SweepSettings,
) -> Result<SweepResult, CurriculumError> {
    grid.validate()?;
    if settings.n_eva == 0 {
        return Err(CurriculumError::Config("n_eva must be at least 1".into()));
    }
    trainer.validate()?;
    let seeds = sweep_eval_seeds(settings.seed, settings.n_eva);
    let cells = grid.cells();
    let run = |&(u_th, gamma_lf): &(f64, f64)| run_cell(env, trainer, settings, &seeds, u_th, gamma_lf);

    #[cfg(feature = "parallel")]
    let results: Vec<CellResult> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers.max(1))
            .build()
            .map_err(|e| CurriculumError::Config(format!("worker pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<CellResult> = cells.iter().map(run).collect();

    let mut best: Option<usize> = None;
    for (i, c) in results.iter().enumerate() {
        if c.status == CellStatus::Ok && best.is_none_or(|b| c.mean_reward > results[b].mean_reward) {
            best = Some(i);
        }
    }
    Ok(SweepResult {
        cells: results,
        best,
        eval_seeds: seeds,
    })
}

fn run_cell(
    env: &Env,
    trainer: &TrainerConfig,
    settings: &SweepSettings,
    seeds: &[u64],
    u_th: f64,
    gamma_lf: f64,
) -> CellResult {
    let failed = |msg: String| CellResult {
        u_th,
        gamma_lf,
        status: CellStatus::Failed(msg),
        mean_reward: f64::NAN,
        mean_utility: f64::NAN,
        final_epsilon: f64::NAN,
        model: None,
        curriculum: None,
    };
    let mut state = match CurriculumState::new(u_th, gamma_lf, settings.epsilon_max) {
        Ok(s) => s,
        Err(e) => return failed(e.to_string()),
    };
    let out = match marl::train(env, trainer, &mut state, settings.seed) {
        Ok(o) => o,
        Err(e) => return failed(e.to_string()),
    };
    let cfg = env.config();
    let policy = QPolicy::greedy(out.selected.params.clone());
    let results = match seeds
        .iter()
        .map(|&s| env.clone().run_episode(&mut policy.clone(), s, cfg.epsilon, cfg.malfunction.evaluation))
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let n = results.len() as f64;
    CellResult {
        u_th,
        gamma_lf,
        status: CellStatus::Ok,
        mean_reward: results.iter().map(|r| r.reward).sum::<f64>() / n,
        mean_utility: results.iter().map(|r| r.report.utility).sum::<f64>() / n,
        final_epsilon: state.epsilon,
        model: Some(out.selected.params),
        curriculum: Some(state),
    }
}

pub const SWEEP_HEADER: [&str; 6] = ["u_th", "gamma_lf", "mean_reward", "final_epsilon", "mean_utility", "status"];

/// One row per cell in grid order.
pub fn write_sweep_csv<W: Write>(cells: &[CellResult], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    let num = |v: f64| if v.is_finite() { format!("{v:.6}") } else { String::new() };
    for c in cells {
        let status = match &c.status {
            CellStatus::Ok => "ok".to_string(),
            CellStatus::Failed(m) => format!("failed: {m}"),
        };
        out.write_record([
            format!("{:.6}", c.u_th),
            format!("{:.6}", c.gamma_lf),
            num(c.mean_reward),
            num(c.final_epsilon),
            num(c.mean_utility),
            status,
        ])?;
    }
    out.flush()?;
    Ok(())
}
