use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uwsn::curriculum::{CurriculumState, GridSpec};
use uwsn::env::ScenarioConfig;
use uwsn::marl::TrainerConfig;
use uwsn::world::Deployment;

use crate::error::CliError;
use crate::manifest::RunManifest;

/// Malfunction-rate curriculum for `train`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSection {
    pub u_th: f64,
    pub gamma_lf: f64,
    #[serde(default = "default_epsilon_max")]
    pub epsilon_max: f64,
}

fn default_epsilon_max() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Number of thresholds `s`.
    pub thresholds: usize,
    pub learning_factors: Vec<f64>,
    pub epsilon_max: f64,
    /// Evaluation episodes for calibration and cell scoring.
    pub n_eva: usize,
    /// Fixed bounds; calibrated when absent.
    pub u_min: Option<f64>,
    pub u_max: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            thresholds: 5,
            learning_factors: vec![0.001, 0.01, 0.1],
            epsilon_max: 0.6,
            n_eva: 20,
            u_min: None,
            u_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

/// Run configuration as written by hand (TOML).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunFile {
    seed: u64,
    /// Deployment JSON; the scenario's standard layout when absent.
    deployment: Option<PathBuf>,
    scenario_file: Option<PathBuf>,
    trainer_file: Option<PathBuf>,
    scenario: Option<ScenarioConfig>,
    trainer: Option<TrainerConfig>,
    curriculum: Option<CurriculumSection>,
    sweep: SweepSection,
    eval: EvalSection,
}

/// Fully resolved configuration; stored in every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub trainer: TrainerConfig,
    pub curriculum: Option<CurriculumSection>,
    pub sweep: SweepSection,
    pub eval: EvalSection,
    pub deployment: Deployment,
}

impl ResolvedConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.trainer.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.deployment
            .validate()
            .map_err(|e| CliError::Config(format!("deployment: {e}")))?;
        if self.deployment.scenario != self.scenario.scenario {
            return Err(CliError::Config("deployment.scenario does not match scenario.scenario".into()));
        }
        if let Some(c) = &self.curriculum {
            CurriculumState::new(c.u_th, c.gamma_lf, c.epsilon_max)
                .map_err(|e| CliError::Config(format!("curriculum: {e}")))?;
        }
        let s = &self.sweep;
        if s.thresholds == 0 || s.n_eva == 0 {
            return Err(CliError::Config("sweep.thresholds and sweep.n_eva must be at least 1".into()));
        }
        if s.u_min.is_some() != s.u_max.is_some() {
            return Err(CliError::Config("sweep.u_min and sweep.u_max must be given together".into()));
        }
        let probe = GridSpec {
            u_min: 0.0,
            u_max: 1.0,
            delta_u: 1.0,
            learning_factors: s.learning_factors.clone(),
        };
        probe.validate().map_err(|e| CliError::Config(format!("sweep: {e}")))?;
        if self.eval.episodes == 0 {
            return Err(CliError::Config("eval.episodes must be at least 1".into()));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    toml::from_str(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Loads a TOML run config, or the configuration recorded in a run manifest
/// (`*.json`).
pub fn load(path: &Path) -> Result<ResolvedConfig, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&read(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        m.config.validate()?;
        return Ok(m.config);
    }
    let file: RunFile = parse_toml(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = match (file.scenario, &file.scenario_file) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either [scenario] or scenario_file, not both".into())),
        (Some(s), None) => s,
        (None, Some(p)) => parse_toml(&base.join(p))?,
        (None, None) => ScenarioConfig::default(),
    };
    let trainer = match (file.trainer, &file.trainer_file) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either [trainer] or trainer_file, not both".into())),
        (Some(t), None) => t,
        (None, Some(p)) => parse_toml(&base.join(p))?,
        (None, None) => TrainerConfig::default(),
    };
    scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let deployment = match &file.deployment {
        Some(p) => {
            let p = base.join(p);
            let f = fs::File::open(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Deployment::from_json_reader(f).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => scenario.deployment(),
    };
    let cfg = ResolvedConfig {
        seed: file.seed,
        scenario,
        trainer,
        curriculum: file.curriculum,
        sweep: file.sweep,
        eval: file.eval,
        deployment,
    };
    cfg.validate()?;
    Ok(cfg)
}
