use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use tomo_core::cli::io::{export_log, import_log, read_matrix, read_tree, tree_to_json, MatrixDoc};
use tomo_core::cli::scenario::{recover_from_matrix, run_dynamic_scenario, run_scenario, run_sweep};
use tomo_core::cli::{RecoverySettings, ScenarioConfig};
use tomo_core::{
    accuracy_report, attach_peer, build_covariance_matrix, generate_topology, remove_peer,
    simulate_session, LogCovariance, NodeId, RecoveryConfig, Result, SimulatorConfig,
};

#[derive(Parser)]
#[command(name = "tomo", version, about = "Routing-tree tomography from packet-pair delay covariance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a network and write one measurement session as NDJSON.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the first seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground-truth tree.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Estimate the covariance matrix of a measurement log.
    Estimate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the routing tree from a log or a covariance matrix.
    Recover {
        #[arg(long, conflicts_with = "cov", required_unless_present = "cov")]
        log: Option<PathBuf>,
        #[arg(long)]
        cov: Option<PathBuf>,
        /// Id of the sending host (tree root).
        #[arg(long)]
        source: String,
        /// Fixed threshold in ms²; derived from the matrix when omitted.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add peers to an existing tree using covariances from a log.
    Join {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long = "peer", required = true)]
        peers: Vec<String>,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove peers from a tree.
    Leave {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long = "peer", required = true)]
        peers: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a recovered tree against the truth over the recovered leaves.
    Score {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario end to end for every seed (static or dynamic).
    E2e {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario over its sweep grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => {
            let mut w = io::stdout().lock();
            writeln!(w, "{text}")?;
        }
    }
    Ok(())
}

fn write_json(out: Option<&Path>, v: &impl Serialize) -> Result<()> {
    write_text(out, &serde_json::to_string_pretty(v)?)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            truth,
        } => {
            let cfg = load_config(&config, seed)?;
            let net_cfg = SimulatorConfig {
                seed: cfg.seeds[0],
                ..cfg.network
            };
            let net = generate_topology(&net_cfg)?;
            let log = simulate_session(&net, &net_cfg)?;
            export_log(&log, &out)?;
            if let Some(t) = truth {
                write_text(Some(&t), &tree_to_json(&net.truth)?)?;
            }
            Ok(())
        }
        Command::Estimate { log, out } => {
            let log = import_log(&log)?;
            let receivers: Vec<NodeId> = log.receivers().cloned().collect();
            let m = build_covariance_matrix(&log, &receivers)?;
            write_json(out.as_deref(), &MatrixDoc::from_matrix(&m))
        }
        Command::Recover {
            log,
            cov,
            source,
            rho,
            out,
        } => {
            let m = match (log, cov) {
                (Some(l), _) => {
                    let log = import_log(&l)?;
                    let receivers: Vec<NodeId> = log.receivers().cloned().collect();
                    build_covariance_matrix(&log, &receivers)?
                }
                (None, Some(c)) => read_matrix(&c)?,
                (None, None) => unreachable!("clap requires one of --log and --cov"),
            };
            let settings = RecoverySettings {
                rho,
                ..RecoverySettings::default()
            };
            let (tree, _) = recover_from_matrix(&NodeId::new(source), &m, &settings)?;
            write_text(out.as_deref(), &tree_to_json(&tree)?)
        }
        Command::Join {
            tree,
            log,
            peers,
            rho,
            out,
        } => {
            let mut tree = read_tree(&tree)?;
            let log = import_log(&log)?;
            let oracle = LogCovariance::new(&log);
            let config = RecoveryConfig::new(rho)?;
            for p in peers {
                attach_peer(&mut tree, &oracle, &NodeId::new(p), config)?;
            }
            write_text(out.as_deref(), &tree_to_json(&tree)?)
        }
        Command::Leave { tree, peers, out } => {
            let mut tree = read_tree(&tree)?;
            for p in peers {
                remove_peer(&mut tree, &NodeId::new(p))?;
            }
            write_text(out.as_deref(), &tree_to_json(&tree)?)
        }
        Command::Score { tree, truth, out } => {
            let rec = read_tree(&tree)?;
            let tru = read_tree(&truth)?;
            let x = rec.leaves().clone();
            let r = accuracy_report(&rec, &tru.restrict_to(&x)?, &x)?;
            write_json(out.as_deref(), &r)
        }
        Command::E2e { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            if cfg.dynamic.is_some() {
                write_json(out.as_deref(), &run_dynamic_scenario(&cfg)?)
            } else {
                write_json(out.as_deref(), &run_scenario(&cfg)?)
            }
        }
        Command::Sweep { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            write_json(out.as_deref(), &run_sweep(&cfg)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tomo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
