//! Experiment drivers: the centralized-vs-federated matrix, the sim-to-real
//! comparison, and the continual-learning arm study.
//!
//! Fairness contract: for a given seed, both training modes start from the
//! same initialization and consume the same generated datasets, and they
//! spend the same compute budget — centralized training is the federated
//! round loop with a single client holding the pooled data.

use crate::continual::{
    collect_route, continual_session, fuse, random_goals, GridWorld, SessionConfig,
};
use crate::data::{
    combine, generate, generate_combined, EnvironmentDataset, EnvironmentId, Realm, ShiftKnobs,
    Split,
};
use crate::error::{Error, Result};
use crate::eval::metrics::{evaluate, BoxStats, MetricsReport};
use crate::federation::{round_seed, run_federated, train_epochs, TrainSchedule};
use crate::models::{ArchName, ModelParams};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How the training compute is organized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Centralized,
    Federated,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Centralized => "centralized",
            TrainMode::Federated => "federated",
        }
    }

    pub fn parse(s: &str) -> Result<TrainMode> {
        match s {
            "centralized" => Ok(TrainMode::Centralized),
            "federated" => Ok(TrainMode::Federated),
            other => Err(Error::Config(format!("unknown training mode '{other}'"))),
        }
    }
}

/// Examples generated per environment and split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSizes {
    pub train_per_env: usize,
    pub val_per_env: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        DatasetSizes { train_per_env: 1000, val_per_env: 200 }
    }
}

/// One experiment description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: TrainMode,
    pub arch: ArchName,
    pub train_envs: Vec<EnvironmentId>,
    pub val_envs: Vec<EnvironmentId>,
    pub seeds: Vec<u64>,
    pub schedule: TrainSchedule,
    pub sizes: DatasetSizes,
    pub shift: ShiftKnobs,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: TrainMode::Federated,
            arch: ArchName::AlexnetLite,
            train_envs: vec![EnvironmentId::Sim(0), EnvironmentId::Sim(1), EnvironmentId::Sim(2)],
            val_envs: vec![EnvironmentId::Sim(0), EnvironmentId::Sim(1), EnvironmentId::Sim(2)],
            seeds: vec![1, 2, 3, 4, 5],
            schedule: TrainSchedule::default(),
            sizes: DatasetSizes::default(),
            shift: ShiftKnobs::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_envs.is_empty() || self.val_envs.is_empty() {
            return Err(Error::Config("experiment needs train and val environments".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        self.schedule.validate()
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_reader(std::fs::File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Centralized training at the federated compute budget: the same round
/// loop, with one client (index 0) holding the pooled data.
pub fn train_centralized(
    init: &ModelParams,
    pooled: &EnvironmentDataset,
    schedule: &TrainSchedule,
    base_seed: u64,
) -> Result<ModelParams> {
    schedule.validate()?;
    let mut model = init.clone();
    for round in 0..schedule.rounds {
        model = train_epochs(
            &model,
            pooled,
            schedule.local_epochs,
            schedule.lr,
            schedule.batch_size,
            round_seed(base_seed, round, 0),
        )?;
        model.version += 1;
    }
    Ok(model)
}

/// Trains one model and evaluates it on the pooled validation environments.
///
/// Per-seed derivations pin everything: initialization ("init"), training
/// data ("data"), validation data ("val-data"), and batch order ("sgd") are
/// all functions of `seed`, identical across modes.
pub fn run_one(
    mode: TrainMode,
    arch: ArchName,
    train_envs: &[EnvironmentId],
    val_envs: &[EnvironmentId],
    seed: u64,
    schedule: &TrainSchedule,
    sizes: &DatasetSizes,
    shift: &ShiftKnobs,
) -> Result<(ModelParams, MetricsReport)> {
    if train_envs.is_empty() {
        return Err(Error::Config("no training environments".into()));
    }
    let init = ModelParams::init(arch, rng::derive(seed, "init"));
    let data_seed = rng::derive(seed, "data");
    let shards: Vec<EnvironmentDataset> = train_envs
        .iter()
        .map(|&env| generate(env, Split::Train, sizes.train_per_env, data_seed, shift))
        .collect::<Result<_>>()?;

    let sgd_seed = rng::derive(seed, "sgd");
    let model = match mode {
        TrainMode::Centralized => {
            train_centralized(&init, &combine(&shards)?, schedule, sgd_seed)?
        }
        TrainMode::Federated => run_federated(&init, &shards, schedule, sgd_seed)?,
    };

    let val = generate_combined(
        val_envs,
        Split::Val,
        sizes.val_per_env,
        rng::derive(seed, "val-data"),
        shift,
    )?;
    let report = evaluate(&model, &val)?;
    Ok((model, report))
}

/// One row of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mode: TrainMode,
    pub arch: ArchName,
    /// Source environments joined with '+'.
    pub train_envs: String,
    /// Validation environments joined with '+'.
    pub val_env: String,
    pub seed: u64,
    pub accuracy: f64,
    pub auc: f64,
}

/// A grid cell that failed, with the error message.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

pub fn join_envs(envs: &[EnvironmentId]) -> String {
    envs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("+")
}

/// All combinations of at least `min_size` environments, in input order,
/// ordered by size then position.
pub fn env_combos(envs: &[EnvironmentId], min_size: usize) -> Vec<Vec<EnvironmentId>> {
    let n = envs.len();
    let mut masks: Vec<u32> = (1u32..(1 << n)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks
        .into_iter()
        .filter(|m| m.count_ones() as usize >= min_size)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| envs[i]).collect())
        .collect()
}

/// Cross-environment grid: every non-empty train combo × every validation
/// environment × every seed, in both training modes.
#[derive(Debug)]
pub struct MatrixReport {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

fn run_cells(
    jobs: Vec<(TrainMode, ArchName, Vec<EnvironmentId>, Vec<EnvironmentId>, u64)>,
    schedule: &TrainSchedule,
    sizes: &DatasetSizes,
    shift: &ShiftKnobs,
) -> MatrixReport {
    let outcomes: Vec<std::result::Result<CellResult, CellFailure>> = jobs
        .par_iter()
        .map(|(mode, arch, train, val, seed)| {
            let name = format!(
                "{}/{}/{}→{}/s{}",
                mode.as_str(),
                arch.as_str(),
                join_envs(train),
                join_envs(val),
                seed
            );
            run_one(*mode, *arch, train, val, *seed, schedule, sizes, shift)
                .map(|(_, report)| CellResult {
                    mode: *mode,
                    arch: *arch,
                    train_envs: join_envs(train),
                    val_env: join_envs(val),
                    seed: *seed,
                    accuracy: report.accuracy,
                    auc: report.auc,
                })
                .map_err(|e| CellFailure { cell: name, error: e.to_string() })
        })
        .collect();

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => cells.push(c),
            Err(f) => failures.push(f),
        }
    }
    cells.sort_by(|a, b| {
        (a.mode, a.arch.as_str(), &a.train_envs, &a.val_env, a.seed).cmp(&(
            b.mode,
            b.arch.as_str(),
            &b.train_envs,
            &b.val_env,
            b.seed,
        ))
    });
    failures.sort_by(|a, b| a.cell.cmp(&b.cell));
    MatrixReport { cells, failures }
}

/// Runs the full train-combo × val-env grid in both modes.
///
/// Cells run in parallel; results are sorted, so the report is independent
/// of scheduling. Failed cells are recorded and skipped, not fatal.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<MatrixReport> {
    cfg.validate()?;
    let combos = env_combos(&cfg.train_envs, 1);
    let mut jobs = Vec::new();
    for mode in [TrainMode::Centralized, TrainMode::Federated] {
        for combo in &combos {
            for &val in &cfg.val_envs {
                for &seed in &cfg.seeds {
                    jobs.push((mode, cfg.arch, combo.clone(), vec![val], seed));
                }
            }
        }
    }
    Ok(run_cells(jobs, &cfg.schedule, &cfg.sizes, &cfg.shift))
}

/// Per-arm spread of sim-to-real transfer scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Sim2RealSummary {
    pub arch: ArchName,
    pub mode: TrainMode,
    pub auc: BoxStats,
    pub accuracy: BoxStats,
}

/// Sim-to-real study: train on multi-sim combos, validate on pooled real.
#[derive(Debug)]
pub struct Sim2RealReport {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub summaries: Vec<Sim2RealSummary>,
}

/// Trains both modes of both architectures on every sim combo of size >= 2
/// and validates on the pooled real environments.
pub fn run_sim2real(cfg: &ExperimentConfig) -> Result<Sim2RealReport> {
    cfg.validate()?;
    if let Some(env) = cfg.train_envs.iter().find(|e| e.realm() != Realm::Sim) {
        return Err(Error::Config(format!("sim-to-real trains only on sim environments, got {env}")));
    }
    if let Some(env) = cfg.val_envs.iter().find(|e| e.realm() != Realm::Real) {
        return Err(Error::Config(format!(
            "sim-to-real validates only on real environments, got {env}"
        )));
    }
    let combos = env_combos(&cfg.train_envs, 2);
    if combos.is_empty() {
        return Err(Error::Config("need at least two sim environments".into()));
    }

    let mut jobs = Vec::new();
    for arch in ArchName::all() {
        for mode in [TrainMode::Centralized, TrainMode::Federated] {
            for combo in &combos {
                for &seed in &cfg.seeds {
                    jobs.push((mode, arch, combo.clone(), cfg.val_envs.clone(), seed));
                }
            }
        }
    }
    let MatrixReport { cells, failures } = run_cells(jobs, &cfg.schedule, &cfg.sizes, &cfg.shift);

    let mut summaries = Vec::new();
    for arch in ArchName::all() {
        for mode in [TrainMode::Centralized, TrainMode::Federated] {
            let sel: Vec<&CellResult> =
                cells.iter().filter(|c| c.arch == arch && c.mode == mode).collect();
            if sel.is_empty() {
                continue;
            }
            summaries.push(Sim2RealSummary {
                arch,
                mode,
                auc: BoxStats::from_samples(&sel.iter().map(|c| c.auc).collect::<Vec<_>>())?,
                accuracy: BoxStats::from_samples(
                    &sel.iter().map(|c| c.accuracy).collect::<Vec<_>>(),
                )?,
            });
        }
    }
    Ok(Sim2RealReport { cells, failures, summaries })
}

/// CSV rows for a result grid, header `mode,arch,train_envs,val_env,seed,accuracy,auc`.
pub fn cells_to_csv(cells: &[CellResult]) -> String {
    let mut out = String::from("mode,arch,train_envs,val_env,seed,accuracy,auc\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6}\n",
            c.mode.as_str(),
            c.arch.as_str(),
            c.train_envs,
            c.val_env,
            c.seed,
            c.accuracy,
            c.auc
        ));
    }
    out
}

pub fn write_csv(path: &Path, cells: &[CellResult]) -> Result<()> {
    std::fs::write(path, cells_to_csv(cells))?;
    Ok(())
}

/// Continual-learning study description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualConfig {
    pub arch: ArchName,
    /// Environments the prior is federated over before deployment.
    pub pretrain_envs: Vec<EnvironmentId>,
    pub schedule: TrainSchedule,
    pub sizes: DatasetSizes,
    pub shift: ShiftKnobs,
    pub session: SessionConfig,
    pub world_width: usize,
    pub world_height: usize,
    pub cell_size: f64,
    pub obstacle_density: f64,
    /// Route goals per training session.
    pub goal_count: usize,
    /// Route goals for the held-out probe drive.
    pub probe_goal_count: usize,
    pub seed: u64,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        ContinualConfig {
            arch: ArchName::AlexnetLite,
            pretrain_envs: vec![
                EnvironmentId::Sim(0),
                EnvironmentId::Sim(1),
                EnvironmentId::Sim(2),
            ],
            schedule: TrainSchedule::default(),
            sizes: DatasetSizes::default(),
            shift: ShiftKnobs::default(),
            session: SessionConfig::default(),
            world_width: 16,
            world_height: 16,
            cell_size: 0.35,
            obstacle_density: 0.18,
            goal_count: 12,
            probe_goal_count: 8,
            seed: 7,
        }
    }
}

impl ContinualConfig {
    pub fn load(path: &Path) -> Result<ContinualConfig> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

/// One fusion arm: which session updates were folded into the prior.
#[derive(Debug)]
pub struct ContinualArm {
    pub name: String,
    pub model: ModelParams,
    pub metrics: MetricsReport,
}

/// Outcome of the continual-learning study.
#[derive(Debug)]
pub struct ContinualReport {
    pub arms: Vec<ContinualArm>,
    pub sim_updates: usize,
    pub real_updates: usize,
    pub probe_size: usize,
    pub probe_blocked: usize,
}

impl ContinualReport {
    pub fn arm(&self, name: &str) -> Option<&ContinualArm> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// Pretrains a federated prior, runs one sim and one real deployment
/// session, and compares fusion arms on a held-out probe drive through the
/// real world.
///
/// Arms: `none` (the prior), `sim_sessions`, `real_sessions`, and
/// `both_sessions` (all updates fused together).
pub fn run_continual(cfg: &ContinualConfig) -> Result<ContinualReport> {
    cfg.session.validate()?;
    if cfg.pretrain_envs.is_empty() {
        return Err(Error::Config("continual study needs pretraining environments".into()));
    }
    let seed = cfg.seed;

    let init = ModelParams::init(cfg.arch, rng::derive(seed, "init"));
    let data_seed = rng::derive(seed, "data");
    let shards: Vec<EnvironmentDataset> = cfg
        .pretrain_envs
        .iter()
        .map(|&env| generate(env, Split::Train, cfg.sizes.train_per_env, data_seed, &cfg.shift))
        .collect::<Result<_>>()?;
    let prior = run_federated(&init, &shards, &cfg.schedule, rng::derive(seed, "sgd"))?;

    let sim_world = GridWorld::random(
        cfg.world_width,
        cfg.world_height,
        cfg.cell_size,
        Realm::Sim,
        cfg.obstacle_density,
        rng::derive(seed, "sim-world"),
    )?;
    let real_world = GridWorld::random(
        cfg.world_width,
        cfg.world_height,
        cfg.cell_size,
        Realm::Real,
        cfg.obstacle_density,
        rng::derive(seed, "real-world"),
    )?;
    let start = (0, 0);

    let sim_goals = random_goals(&sim_world, start, cfg.goal_count, rng::derive(seed, "sim-goals"))?;
    let sim_out = continual_session(
        &sim_world,
        &prior,
        start,
        &sim_goals,
        &cfg.session,
        rng::derive(seed, "sim-session"),
    )?;

    let real_goals =
        random_goals(&real_world, start, cfg.goal_count, rng::derive(seed, "real-goals"))?;
    let real_out = continual_session(
        &real_world,
        &prior,
        start,
        &real_goals,
        &cfg.session,
        rng::derive(seed, "real-session"),
    )?;

    let probe_goals =
        random_goals(&real_world, start, cfg.probe_goal_count, rng::derive(seed, "probe-goals"))?;
    let (probe, _) =
        collect_route(&real_world, start, &probe_goals, &cfg.session, rng::derive(seed, "probe"))?;
    let probe_blocked = probe.examples.iter().filter(|e| e.label == 1).count();

    let both: Vec<_> =
        sim_out.updates.iter().chain(real_out.updates.iter()).cloned().collect();
    let arms_spec: [(&str, Vec<_>); 4] = [
        ("none", vec![]),
        ("sim_sessions", sim_out.updates.clone()),
        ("real_sessions", real_out.updates.clone()),
        ("both_sessions", both),
    ];

    let mut arms = Vec::with_capacity(arms_spec.len());
    for (name, updates) in arms_spec {
        let model = fuse(&prior, &updates)?;
        let metrics = evaluate(&model, &probe)?;
        arms.push(ContinualArm { name: name.to_string(), model, metrics });
    }

    Ok(ContinualReport {
        arms,
        sim_updates: sim_out.updates.len(),
        real_updates: real_out.updates.len(),
        probe_size: probe.len(),
        probe_blocked,
    })
}
