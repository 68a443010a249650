use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use uwsn::baselines::{BaselineKind, BaselinePolicy};
use uwsn::curriculum::{
    calibrate_bounds, calibration_seeds, grid_search, write_sweep_csv, Bounds, CurriculumError, CurriculumState,
    GridSpec, SweepSettings,
};
use uwsn::env::{derive_seed, evaluate, Env, EpisodeResult, Policy};
use uwsn::marl::{net_shape, train, write_training_log, CurriculumHook, FixedEpsilon, QPolicy, TrainError};
use uwsn::metrics::MetricsReport;
use uwsn::neural::{load_checkpoint, save_checkpoint, NetParams};
use uwsn::world::write_trace_csv;

use crate::config::ResolvedConfig;
use crate::error::CliError;
use crate::manifest::{write_manifest, Clock};

/// Seed stream of `eval` and `compare` episodes.
const STREAM_CLI_EVAL: u64 = 0x4556;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PolicyKind {
    Icrl,
    Epa,
    Olpa,
    Rpa,
    Solpa,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Icrl,
        PolicyKind::Epa,
        PolicyKind::Olpa,
        PolicyKind::Rpa,
        PolicyKind::Solpa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Icrl => "icrl",
            PolicyKind::Epa => "epa",
            PolicyKind::Olpa => "olpa",
            PolicyKind::Rpa => "rpa",
            PolicyKind::Solpa => "solpa",
        }
    }

    fn baseline(self) -> Option<BaselineKind> {
        match self {
            PolicyKind::Icrl => None,
            PolicyKind::Epa => Some(BaselineKind::Epa),
            PolicyKind::Olpa => Some(BaselineKind::Olpa),
            PolicyKind::Rpa => Some(BaselineKind::Rpa),
            PolicyKind::Solpa => Some(BaselineKind::Solpa),
        }
    }
}

pub struct Run {
    pub config: ResolvedConfig,
    pub out: PathBuf,
    pub workers: usize,
}

impl Run {
    fn env(&self) -> Result<Env, CliError> {
        Env::new(&self.config.scenario, &self.config.deployment).map_err(|e| CliError::Config(e.to_string()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Run(format!("worker pool: {e}")))
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::artifact(self.out.display(), e))
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>, CliError> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::artifact(parent.display(), e))?;
        }
        fs::File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::artifact(path.display(), e))
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::artifact(name, e))?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .map_err(|e| CliError::artifact(name, e))
    }

    fn write_deployment(&self) -> Result<(), CliError> {
        let w = self.create("deployment.json")?;
        self.config
            .deployment
            .to_json_writer(w)
            .map_err(|e| CliError::artifact("deployment.json", e))
    }

    fn save_model(&self, dir: &str, params: &NetParams<f32>, metadata: serde_json::Value) -> Result<(), CliError> {
        save_checkpoint(
            &self.out.join(dir),
            params,
            self.config.trainer.init,
            self.config.seed,
            metadata,
        )
        .map(|_| ())
        .map_err(|e| CliError::artifact(dir, e))
    }
}

fn train_failure(run: &Run, e: TrainError) -> CliError {
    if let TrainError::NonFiniteLoss(d) = &e {
        if let Err(w) = run.write_json("diagnostics.json", d.as_ref()) {
            eprintln!("{w}");
        }
    }
    match e {
        TrainError::Config(m) => CliError::Config(m),
        other => CliError::Run(other.to_string()),
    }
}

fn curriculum_failure(run: &Run, e: CurriculumError) -> CliError {
    match e {
        CurriculumError::Train(t) => train_failure(run, t),
        CurriculumError::Config(m) => CliError::Config(m),
        other => CliError::Run(other.to_string()),
    }
}

pub fn train_cmd(run: &Run) -> Result<(), CliError> {
    let clock = Clock::start();
    let env = run.env()?;
    run.prepare_out()?;
    let cfg = &run.config;
    let mut curriculum = cfg
        .curriculum
        .map(|c| CurriculumState::new(c.u_th, c.gamma_lf, c.epsilon_max))
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut fixed = FixedEpsilon(cfg.scenario.epsilon);
    let hook: &mut (dyn CurriculumHook + Send) = match curriculum.as_mut() {
        Some(c) => c,
        None => &mut fixed,
    };
    let outcome = run
        .pool()?
        .install(|| train(&env, &cfg.trainer, &mut *hook, cfg.seed))
        .map_err(|e| train_failure(run, e))?;

    let log = run.create("training_log.csv")?;
    write_training_log(&outcome.log, log).map_err(|e| CliError::artifact("training_log.csv", e))?;
    let sel = &outcome.selected;
    run.save_model(
        "model",
        &sel.params,
        json!({
            "episode": sel.episode,
            "epsilon_malfunction": sel.epsilon_malfunction,
            "mean_eval_reward": sel.mean_eval_reward,
            "mean_eval_utility": sel.mean_eval_utility,
        }),
    )?;
    run.save_model("final", &outcome.final_params, json!({ "episode": cfg.trainer.episodes }))?;
    run.write_deployment()?;
    let mut artifacts = vec!["training_log.csv", "model/", "final/", "deployment.json"];
    if let Some(c) = &curriculum {
        run.write_json("curriculum.json", c)?;
        artifacts.push("curriculum.json");
    }
    let manifest = clock.manifest(
        "train",
        cfg,
        json!({ "train": cfg.seed, "eval": uwsn::marl::eval_seeds(cfg.seed, cfg.trainer.eval_runs) }),
        artifacts.into_iter().map(String::from).collect(),
        json!({
            "selected_episode": sel.episode,
            "selected_mean_eval_reward": sel.mean_eval_reward,
            "snapshots": outcome.snapshots.len(),
        }),
    );
    write_manifest(&run.out, &manifest)?;
    println!(
        "trained {} episodes; selected model from episode {} (mean eval reward {:.3})",
        cfg.trainer.episodes, sel.episode, sel.mean_eval_reward
    );
    Ok(())
}

/// Episode seeds shared by every policy in `eval` and `compare`.
pub fn episode_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(seed, STREAM_CLI_EVAL, i)).collect()
}

fn load_model(env: &Env, dir: &Path) -> Result<Arc<NetParams<f32>>, CliError> {
    let (params, _) = load_checkpoint(dir).map_err(|e| CliError::artifact(dir.display(), e))?;
    let want = net_shape(env);
    if params.shape != want {
        return Err(CliError::Artifact(format!(
            "{}: model shape {:?} does not match the scenario ({:?})",
            dir.display(),
            params.shape,
            want
        )));
    }
    Ok(Arc::new(params))
}

fn run_policy(
    env: &Env,
    kind: PolicyKind,
    model: Option<&Arc<NetParams<f32>>>,
    seeds: &[u64],
) -> Result<Vec<EpisodeResult>, CliError> {
    let cfg = env.config();
    let (eps, behavior) = (cfg.epsilon, cfg.malfunction.evaluation);
    let res = match kind.baseline() {
        Some(b) => evaluate(env, &BaselinePolicy::new(b), seeds, eps, behavior),
        None => {
            let params = model.ok_or_else(|| CliError::Config("policy icrl needs --model".into()))?;
            evaluate(env, &QPolicy::greedy(params.clone()), seeds, eps, behavior)
        }
    };
    res.map_err(|e| CliError::Run(e.to_string()))
}

fn boxed_policy(kind: PolicyKind, model: Option<&Arc<NetParams<f32>>>) -> Box<dyn Policy> {
    match (kind.baseline(), model) {
        (Some(b), _) => Box::new(BaselinePolicy::new(b)),
        (None, Some(p)) => Box::new(QPolicy::greedy(p.clone())),
        (None, None) => unreachable!("checked by run_policy"),
    }
}

fn write_episodes<W: Write>(results: &[EpisodeResult], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["seed", "reward", "violated"];
    header.extend(MetricsReport::FIELDS);
    out.write_record(&header)?;
    for r in results {
        let mut row = vec![r.seed.to_string(), r.reward.to_string(), r.violated.to_string()];
        row.extend(r.report.values().iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn eval_cmd(run: &Run, kind: PolicyKind, model: Option<&Path>, traces: bool) -> Result<(), CliError> {
    let clock = Clock::start();
    let env = run.env()?;
    if kind == PolicyKind::Icrl && model.is_none() {
        return Err(CliError::Config("policy icrl needs --model".into()));
    }
    let params = model.map(|m| load_model(&env, m)).transpose()?;
    run.prepare_out()?;
    let cfg = &run.config;
    let seeds = episode_seeds(cfg.seed, cfg.eval.episodes);
    let results = run.pool()?.install(|| run_policy(&env, kind, params.as_ref(), &seeds))?;
    let reports: Vec<MetricsReport> = results.iter().map(|r| r.report).collect();
    let aggregate = MetricsReport::mean(&reports).expect("at least one episode");

    write_episodes(&results, run.create("episodes.csv")?).map_err(|e| CliError::artifact("episodes.csv", e))?;
    run.write_json(
        "aggregate.json",
        &json!({
            "policy": kind.name(),
            "epsilon_malfunction": cfg.scenario.epsilon,
            "malfunction_behavior": cfg.scenario.malfunction.evaluation,
            "violations": results.iter().filter(|r| r.violated).count(),
            "metrics": aggregate,
        }),
    )?;
    let mut artifacts = vec!["episodes.csv".to_string(), "aggregate.json".to_string()];
    if traces {
        for (i, &seed) in seeds.iter().enumerate() {
            let mut e = env.clone();
            let mut p = boxed_policy(kind, params.as_ref());
            e.run_episode(p.as_mut(), seed, cfg.scenario.epsilon, cfg.scenario.malfunction.evaluation)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let name = format!("traces/episode_{i:04}.csv");
            let mut w = run.create(&name)?;
            write_trace_csv(e.outcomes(), &mut w).map_err(|e| CliError::artifact(&name, e))?;
            w.flush().map_err(|e| CliError::artifact(&name, e))?;
        }
        artifacts.push("traces/".into());
    }
    let manifest = clock.manifest(
        "eval",
        cfg,
        json!({ "episodes": seeds }),
        artifacts,
        json!({ "policy": kind.name(), "model": model.map(|m| m.display().to_string()) }),
    );
    write_manifest(&run.out, &manifest)?;
    println!(
        "{}: mean utility {:.4}, mean reward {:.3} over {} episodes",
        kind.name(),
        aggregate.utility,
        aggregate.episode_reward,
        aggregate.episodes
    );
    Ok(())
}

pub const COMPARE_HEADER: [&str; 7] = [
    "policy",
    "utility",
    "throughput",
    "fairness",
    "delivery_ratio",
    "spatial_reuse",
    "episode_reward",
];

pub fn compare_cmd(run: &Run, model: &Path) -> Result<(), CliError> {
    let clock = Clock::start();
    let env = run.env()?;
    let params = load_model(&env, model)?;
    run.prepare_out()?;
    let cfg = &run.config;
    let seeds = episode_seeds(cfg.seed, cfg.eval.episodes);
    let pool = run.pool()?;
    let mut out = csv::Writer::from_writer(run.create("compare.csv")?);
    let csv_err = |e: csv::Error| CliError::artifact("compare.csv", e);
    out.write_record(COMPARE_HEADER).map_err(csv_err)?;
    for kind in PolicyKind::ALL {
        let results = pool.install(|| run_policy(&env, kind, Some(&params), &seeds))?;
        let reports: Vec<MetricsReport> = results.iter().map(|r| r.report).collect();
        let m = MetricsReport::mean(&reports).expect("at least one episode");
        let row = [m.utility, m.throughput, m.fairness, m.delivery_ratio, m.spatial_reuse, m.episode_reward];
        let mut record = vec![kind.name().to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&record).map_err(csv_err)?;
        println!("{:<6} utility {:.4} delivery {:.3}", kind.name(), m.utility, m.delivery_ratio);
    }
    out.flush().map_err(|e| CliError::artifact("compare.csv", e))?;
    let manifest = clock.manifest(
        "compare",
        cfg,
        json!({ "episodes": seeds }),
        vec!["compare.csv".into()],
        json!({ "model": model.display().to_string() }),
    );
    write_manifest(&run.out, &manifest)
}

pub fn sweep_cmd(run: &Run) -> Result<(), CliError> {
    let clock = Clock::start();
    let env = run.env()?;
    run.prepare_out()?;
    let cfg = &run.config;
    let s = &cfg.sweep;
    let pool = run.pool()?;
    let calibrated = s.u_min.is_none();
    let bounds = match (s.u_min, s.u_max) {
        (Some(u_min), Some(u_max)) => Bounds { u_min, u_max },
        _ => pool
            .install(|| calibrate_bounds(&env, &cfg.trainer, cfg.seed, s.n_eva))
            .map_err(|e| curriculum_failure(run, e))?,
    };
    let grid = GridSpec::from_bounds(bounds, s.thresholds, s.learning_factors.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let settings = SweepSettings {
        seed: cfg.seed,
        epsilon_max: s.epsilon_max,
        n_eva: s.n_eva,
        workers: run.workers,
    };
    let result = grid_search(&grid, &env, &cfg.trainer, &settings).map_err(|e| curriculum_failure(run, e))?;

    write_sweep_csv(&result.cells, run.create("sweep.csv")?).map_err(|e| CliError::artifact("sweep.csv", e))?;
    let mut artifacts = vec!["sweep.csv".to_string()];
    let best = result.best.map(|i| &result.cells[i]);
    if let Some(b) = best {
        let params = b.model.as_ref().expect("successful cell has a model");
        run.save_model("best_model", params, json!({ "u_th": b.u_th, "gamma_lf": b.gamma_lf }))?;
        artifacts.push("best_model/".into());
    }
    let manifest = clock.manifest(
        "sweep",
        cfg,
        json!({
            "train": cfg.seed,
            "cell_eval": result.eval_seeds,
            "calibration": if calibrated { json!(calibration_seeds(cfg.seed, s.n_eva)) } else { json!(null) },
        }),
        artifacts,
        json!({
            "bounds": bounds,
            "calibrated": calibrated,
            "grid": grid,
            "best": best.map(|b| json!({
                "u_th": b.u_th,
                "gamma_lf": b.gamma_lf,
                "mean_reward": b.mean_reward,
                "final_epsilon": b.final_epsilon,
            })),
            "failed_cells": result.cells.iter().filter(|c| c.model.is_none()).count(),
        }),
    );
    write_manifest(&run.out, &manifest)?;
    match best {
        Some(b) => println!(
            "best cell u_th {:.4}, gamma_lf {} (mean reward {:.3})",
            b.u_th, b.gamma_lf, b.mean_reward
        ),
        None => return Err(CliError::Run("every sweep cell failed".into())),
    }
    Ok(())
}
