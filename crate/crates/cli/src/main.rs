//! Command-line front end: dataset generation, both training modes, TCP
//! serving, the experiment drivers, and model evaluation.

use clap::{Parser, Subcommand};
use fedrover::data::{self, EnvironmentId, Split};
use fedrover::error::{Error, Result};
use fedrover::eval::{
    self, run_continual, run_matrix, run_one, run_sim2real, ContinualConfig, ExperimentConfig,
    TrainMode,
};
use fedrover::models::{load_model, save_model, ArchName, ModelParams};
use fedrover::rng;
use fedrover::transport::sim::{NetConditions, SimSessionConfig};
use fedrover::transport::tcp::{self, TcpClientConfig, TcpServerConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fedrover",
    version,
    about = "Desk-scale federated continual learning for vision-based obstacle avoidance"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset and write it as a .feds file plus JSON manifest.
    GenData {
        /// Environments, '+'-separated (sim0..sim2, real0..real2, husky_sim, husky_real).
        #[arg(long)]
        env: String,
        /// Dataset split: train or val.
        #[arg(long, default_value = "train")]
        split: String,
        /// Examples per environment.
        #[arg(long, default_value_t = 300)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output path (.feds); the manifest lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one centralized model on the pooled training environments.
    TrainCentral {
        /// Experiment description (JSON); defaults cover the sim environments.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to save the trained model (.fedm).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one federated model, in-process or over simulated lossy links.
    TrainFed {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frame drop probability on the simulated channel (enables it when > 0).
        #[arg(long, default_value_t = 0.0)]
        net_drop: f64,
        /// Frame duplication probability on the simulated channel.
        #[arg(long, default_value_t = 0.0)]
        net_dup: f64,
        /// Max extra delivery delay, in ticks, for reordering.
        #[arg(long, default_value_t = 0)]
        net_reorder: u64,
    },
    /// Coordinate federated rounds over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7070)]
        port: u16,
        /// Clients that must register before rounds start.
        #[arg(long, default_value_t = 2)]
        clients: usize,
        #[arg(long, default_value_t = 5)]
        rounds: u32,
        /// Fraction of clients required to commit a round.
        #[arg(long, default_value_t = 1.0)]
        quorum: f64,
        #[arg(long, default_value = "alexnet_lite")]
        arch: String,
        /// Seed for the initial global model.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join a TCP session as one client.
    Client {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7070)]
        port: u16,
        /// Client identifier, unique per session.
        #[arg(long)]
        id: String,
        /// Client index used in per-round seed derivation.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Local data: a .feds path, or an environment name to generate.
        #[arg(long)]
        data: String,
        /// Examples to generate when --data names an environment.
        #[arg(long, default_value_t = 300)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "alexnet_lite")]
        arch: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain a prior, run deployment sessions, compare fusion arms.
    Continual {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every train-combo × val-env cell in both modes; write CSV.
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on multi-sim combos, validate on pooled real; write CSV.
    Sim2real {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model (.fedm) on a saved dataset (.feds).
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn parse_envs(list: &str) -> Result<Vec<EnvironmentId>> {
    list.split('+').map(EnvironmentId::parse).collect()
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        other => Err(Error::Config(format!("unknown split '{other}'"))),
    }
}

fn load_experiment(config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn print_report(report: &eval::MetricsReport) {
    println!("accuracy  {:.4}", report.accuracy);
    println!("auc       {:.4}", report.auc);
    println!(
        "confusion free→free {}  free→blocked {}  blocked→free {}  blocked→blocked {}",
        report.confusion[0][0], report.confusion[0][1], report.confusion[1][0],
        report.confusion[1][1]
    );
}

fn maybe_save(out: Option<&Path>, model: &ModelParams) -> Result<()> {
    if let Some(path) = out {
        save_model(path, model)?;
        println!("saved model to {}", path.display());
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { env, split, size, seed, out } => {
            let envs = parse_envs(&env)?;
            let split = parse_split(&split)?;
            let shift = data::ShiftKnobs::default();
            let ds = data::generate_combined(&envs, split, size, seed, &shift)?;
            data::feds::save(&out, &ds)?;
            let (blocked, free) = ds.class_counts();
            println!(
                "wrote {} examples ({} free, {} blocked) to {}",
                ds.len(),
                free,
                blocked,
                out.display()
            );
        }

        Cmd::TrainCentral { config, seed, out } => {
            let cfg = load_experiment(config.as_deref(), seed)?;
            let seed = cfg.seeds[0];
            let (model, report) = run_one(
                TrainMode::Centralized,
                cfg.arch,
                &cfg.train_envs,
                &cfg.val_envs,
                seed,
                &cfg.schedule,
                &cfg.sizes,
                &cfg.shift,
            )?;
            print_report(&report);
            maybe_save(out.as_deref(), &model)?;
        }

        Cmd::TrainFed { config, seed, out, net_drop, net_dup, net_reorder } => {
            let cfg = load_experiment(config.as_deref(), seed)?;
            let seed = cfg.seeds[0];
            let lossy = net_drop > 0.0 || net_dup > 0.0 || net_reorder > 0;
            let (model, report) = if lossy {
                let init = ModelParams::init(cfg.arch, rng::derive(seed, "init"));
                let data_seed = rng::derive(seed, "data");
                let shards = cfg
                    .train_envs
                    .iter()
                    .map(|&env| {
                        data::generate(env, Split::Train, cfg.sizes.train_per_env, data_seed, &cfg.shift)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let session = SimSessionConfig {
                    schedule: cfg.schedule,
                    conditions: NetConditions {
                        drop: net_drop,
                        dup: net_dup,
                        reorder_window: net_reorder,
                        ..NetConditions::default()
                    },
                    train_seed: rng::derive(seed, "sgd"),
                    net_seed: rng::derive(seed, "net"),
                    ..SimSessionConfig::default()
                };
                let out = fedrover::transport::sim::run_sim_session(&init, &shards, &session)?;
                if !out.completed {
                    return Err(Error::Protocol(format!(
                        "session stalled after {} of {} rounds",
                        out.committed_rounds, cfg.schedule.rounds
                    )));
                }
                println!(
                    "session: {} rounds in {} attempts, {} frames sent, {} dropped",
                    out.committed_rounds, out.round_attempts, out.frames_sent, out.frames_dropped
                );
                let val = data::generate_combined(
                    &cfg.val_envs,
                    Split::Val,
                    cfg.sizes.val_per_env,
                    rng::derive(seed, "val-data"),
                    &cfg.shift,
                )?;
                let report = eval::evaluate(&out.final_global, &val)?;
                (out.final_global, report)
            } else {
                run_one(
                    TrainMode::Federated,
                    cfg.arch,
                    &cfg.train_envs,
                    &cfg.val_envs,
                    seed,
                    &cfg.schedule,
                    &cfg.sizes,
                    &cfg.shift,
                )?
            };
            print_report(&report);
            maybe_save(out.as_deref(), &model)?;
        }

        Cmd::Serve { host, port, clients, rounds, quorum, arch, seed, out } => {
            let arch = ArchName::parse(&arch)?;
            let init = ModelParams::init(arch, rng::derive(seed, "init"));
            let cfg = TcpServerConfig {
                addr: format!("{host}:{port}"),
                expected_clients: clients,
                rounds,
                quorum,
                ..TcpServerConfig::default()
            };
            println!("serving {} rounds on {} for {} clients", rounds, cfg.addr, clients);
            let global = tcp::serve(init, &cfg)?;
            println!("final global model: version {}", global.version);
            maybe_save(out.as_deref(), &global)?;
        }

        Cmd::Client { host, port, id, index, data: source, size, seed, arch, out } => {
            let arch = ArchName::parse(&arch)?;
            let ds = if source.ends_with(".feds") {
                data::feds::load(Path::new(&source))?
            } else {
                let env = EnvironmentId::parse(&source)?;
                data::generate(
                    env,
                    Split::Train,
                    size,
                    rng::derive(seed, "data"),
                    &data::ShiftKnobs::default(),
                )?
            };
            let cfg = TcpClientConfig {
                addr: format!("{host}:{port}"),
                client_id: id,
                client_index: index,
                train_seed: rng::derive(seed, "sgd"),
                ..TcpClientConfig::default()
            };
            let global = tcp::run_client(&ds, arch, &cfg)?;
            println!("final global model: version {}", global.version);
            maybe_save(out.as_deref(), &global)?;
        }

        Cmd::Continual { config, seed } => {
            let mut cfg = match config {
                Some(path) => ContinualConfig::load(&path)?,
                None => ContinualConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_continual(&cfg)?;
            println!(
                "sessions: {} sim updates, {} real updates; probe {} frames ({} blocked)",
                report.sim_updates, report.real_updates, report.probe_size, report.probe_blocked
            );
            for arm in &report.arms {
                println!(
                    "{:<14} accuracy {:.4}  auc {:.4}",
                    arm.name, arm.metrics.accuracy, arm.metrics.auc
                );
            }
        }

        Cmd::Matrix { config, out } => {
            let cfg = load_experiment(config.as_deref(), None)?;
            let report = run_matrix(&cfg)?;
            eval::write_csv(&out, &report.cells)?;
            println!("wrote {} cells to {}", report.cells.len(), out.display());
            for f in &report.failures {
                eprintln!("failed cell {}: {}", f.cell, f.error);
            }
        }

        Cmd::Sim2real { config, out } => {
            let mut cfg = load_experiment(config.as_deref(), None)?;
            if config.is_none() {
                cfg.val_envs =
                    vec![EnvironmentId::Real(0), EnvironmentId::Real(1), EnvironmentId::Real(2)];
            }
            let report = run_sim2real(&cfg)?;
            eval::write_csv(&out, &report.cells)?;
            println!("wrote {} cells to {}", report.cells.len(), out.display());
            for s in &report.summaries {
                println!(
                    "{:<12} {:<12} auc median {:.4} mean {:.4}",
                    s.arch.as_str(),
                    s.mode.as_str(),
                    s.auc.median,
                    s.auc.mean
                );
            }
            for f in &report.failures {
                eprintln!("failed cell {}: {}", f.cell, f.error);
            }
        }

        Cmd::Report { model, data: data_path } => {
            let model = load_model(&model)?;
            let ds = data::feds::load(&data_path)?;
            let report = eval::evaluate(&model, &ds)?;
            print_report(&report);
        }
    }
    Ok(())
}
