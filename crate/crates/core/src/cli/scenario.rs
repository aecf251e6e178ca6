//! Scenario runners: simulate, estimate, recover and score over many seeds.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DynamicSpec, RecoverySettings, ScenarioConfig};
use super::io::TreeNode;
use crate::accuracy::accuracy_report;
use crate::dce::{build_covariance_matrix, LogCovariance};
use crate::dynamic::attach_peer;
use crate::error::{Error, Result};
use crate::model::{CovarianceMatrix, NodeId, RoutingTree};
use crate::ordering::dfs_order;
use crate::recover::recover_tree;
use crate::simulator::{generate_topology, simulate_session, SimulatedNetwork, SimulatorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSummary {
    pub n_receivers: usize,
    pub mean_variance: f64,
    pub mean_covariance: f64,
    pub min_covariance: f64,
    pub max_covariance: f64,
}

impl CovarianceSummary {
    pub fn of(m: &CovarianceMatrix) -> Self {
        let n = m.len();
        let diag: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
        let off: Vec<f64> = m.off_diagonal().collect();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        CovarianceSummary {
            n_receivers: n,
            mean_variance: mean(&diag),
            mean_covariance: mean(&off),
            min_covariance: off.iter().copied().fold(f64::INFINITY, f64::min),
            max_covariance: off.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub p: f64,
    pub p_distinct: Option<f64>,
    pub rho: f64,
    pub covariance: CovarianceSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub mean_p: f64,
    pub stderr: f64,
    pub mean_p_distinct: Option<f64>,
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn summarize(runs: &[RunRecord]) -> Summary {
    let ps: Vec<f64> = runs.iter().map(|r| r.p).collect();
    let (mean_p, stderr) = mean_stderr(&ps);
    let pd: Option<Vec<f64>> = runs.iter().map(|r| r.p_distinct).collect();
    Summary {
        runs: runs.len(),
        mean_p,
        stderr,
        mean_p_distinct: pd.map(|v| mean_stderr(&v).0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticReport {
    pub config: ScenarioConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Summary,
}

/// Result of one static run, with the trees kept for inspection.
pub struct StaticRun {
    pub network: SimulatedNetwork,
    pub covariance: CovarianceMatrix,
    pub recovered: RoutingTree,
    pub record: RunRecord,
}

fn with_seed(network: &SimulatorConfig, seed: u64) -> SimulatorConfig {
    SimulatorConfig {
        seed,
        ..network.clone()
    }
}

/// Estimates, orders and recovers the tree over `receivers`.
pub fn recover_from_matrix(
    source: &NodeId,
    cov: &CovarianceMatrix,
    settings: &RecoverySettings,
) -> Result<(RoutingTree, f64)> {
    let config = settings.resolve(Some(cov))?;
    let order = dfs_order(cov);
    let tree = recover_tree(source, &order, cov, config)?;
    tree.validate()
        .map_err(|e| Error::Internal(format!("recovered tree is inconsistent: {e}")))?;
    Ok((tree, config.rho))
}

pub fn run_static_once(
    network: &SimulatorConfig,
    settings: &RecoverySettings,
    seed: u64,
) -> Result<StaticRun> {
    let cfg = with_seed(network, seed);
    let net = generate_topology(&cfg)?;
    let log = simulate_session(&net, &cfg)?;
    let clients = net.clients_sorted();
    let cov = build_covariance_matrix(&log, &clients)?;
    let (recovered, rho) = recover_from_matrix(&net.source, &cov, settings)?;
    let acc = accuracy_report(&recovered, &net.truth, &net.clients)?;
    let record = RunRecord {
        seed,
        p: acc.p,
        p_distinct: acc.p_distinct,
        rho,
        covariance: CovarianceSummary::of(&cov),
        tree: Some(TreeNode::from_tree(&recovered)),
    };
    Ok(StaticRun {
        network: net,
        covariance: cov,
        recovered,
        record,
    })
}

fn run_seeds(
    network: &SimulatorConfig,
    settings: &RecoverySettings,
    seeds: &[u64],
) -> Result<Vec<RunRecord>> {
    seeds
        .par_iter()
        .map(|&s| run_static_once(network, settings, s).map(|r| r.record))
        .collect()
}

/// Runs the static pipeline once per seed. Runs are independent and ordered
/// by their position in `seeds`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<StaticReport> {
    config.validate()?;
    let runs = run_seeds(&config.network, &config.recovery, &config.seeds)?;
    Ok(StaticReport {
        config: config.clone(),
        summary: summarize(&runs),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub bg_rate: f64,
    pub packet_size_bytes: f64,
    pub pair_interval_us: i64,
    pub summary: Summary,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ScenarioConfig,
    pub points: Vec<SweepPoint>,
}

/// Runs the scenario at every point of the sweep grid. Only the last run of
/// each point keeps its tree.
pub fn run_sweep(config: &ScenarioConfig) -> Result<SweepReport> {
    config.validate()?;
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "missing sweep section"))?;
    let or_own = |v: &[f64], own: f64| if v.is_empty() { vec![own] } else { v.to_vec() };
    let rates = or_own(&spec.bg_rate, config.network.bg_rate);
    let sizes = or_own(&spec.packet_size_bytes, config.network.packet_size_bytes);
    let intervals = if spec.pair_interval_us.is_empty() {
        vec![config.network.pair_interval_us]
    } else {
        spec.pair_interval_us.clone()
    };
    let mut points = Vec::new();
    for &bg_rate in &rates {
        for &packet_size_bytes in &sizes {
            for &pair_interval_us in &intervals {
                let network = SimulatorConfig {
                    bg_rate,
                    packet_size_bytes,
                    pair_interval_us,
                    ..config.network.clone()
                };
                network.validate()?;
                let mut runs = run_seeds(&network, &config.recovery, &config.seeds)?;
                let last = runs.len() - 1;
                for r in &mut runs[..last] {
                    r.tree = None;
                }
                points.push(SweepPoint {
                    bg_rate,
                    packet_size_bytes,
                    pair_interval_us,
                    summary: summarize(&runs),
                    runs,
                });
            }
        }
    }
    Ok(SweepReport {
        config: config.clone(),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Active hosts plus routers.
    pub n_nodes: usize,
    pub n_clients: usize,
    pub p: f64,
    pub p_distinct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicRun {
    pub seed: u64,
    pub rho: f64,
    pub curve: Vec<CurvePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub step: usize,
    pub n_nodes: usize,
    pub mean_p: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicReport {
    pub config: ScenarioConfig,
    pub runs: Vec<DynamicRun>,
    pub curve: Vec<CurveSummary>,
    /// Mean accuracy at the first step minus mean accuracy at the last.
    pub drop: f64,
}

fn host_index(id: &NodeId) -> Option<usize> {
    id.as_str().strip_prefix('h')?.parse().ok()
}

/// Join steps as (client ids, active host count after the step).
fn join_schedule(
    spec: &DynamicSpec,
    net: &SimulatedNetwork,
    n_hosts: usize,
) -> Result<Vec<(Vec<NodeId>, usize)>> {
    let initial = spec.initial_hosts;
    if let Some(schedule) = &spec.schedule {
        let mut seen = BTreeSet::new();
        let mut active = initial;
        let mut steps = Vec::new();
        for step in schedule {
            let mut ids = Vec::new();
            for s in step {
                let id = NodeId::new(s.clone());
                let idx = host_index(&id).filter(|_| net.clients.contains(&id));
                match idx {
                    None => {
                        return Err(Error::config(
                            "dynamic.schedule",
                            format!("{s} is not a client of the generated network"),
                        ))
                    }
                    Some(i) if i < initial => {
                        return Err(Error::config(
                            "dynamic.schedule",
                            format!("{s} is already present at the start"),
                        ))
                    }
                    Some(_) => {}
                }
                if !seen.insert(id.clone()) {
                    return Err(Error::config(
                        "dynamic.schedule",
                        format!("{s} joins more than once"),
                    ));
                }
                ids.push(id);
            }
            active += ids.len();
            steps.push((ids, active));
        }
        return Ok(steps);
    }
    let mut steps = Vec::new();
    let Some(step) = spec.host_step else {
        return Ok(steps);
    };
    let mut lo = initial;
    while lo < n_hosts {
        let hi = (lo + step).min(n_hosts);
        let ids = net
            .clients
            .iter()
            .filter(|c| host_index(c).is_some_and(|i| (lo..hi).contains(&i)))
            .cloned()
            .collect();
        steps.push((ids, hi));
        lo = hi;
    }
    Ok(steps)
}

/// One growth run: the final network is generated up front, the first
/// `initial_hosts` hosts are recovered statically and the rest join through
/// the incremental algorithm.
pub fn run_dynamic_once(config: &ScenarioConfig, seed: u64) -> Result<DynamicRun> {
    let spec = config
        .dynamic
        .as_ref()
        .ok_or_else(|| Error::config("dynamic", "missing dynamic section"))?;
    let mut cfg = with_seed(&config.network, seed);
    if cfg.source_host.is_none() && spec.initial_hosts < cfg.n_hosts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        cfg.source_host = Some(rng.gen_range(0..spec.initial_hosts));
    }
    let net = generate_topology(&cfg)?;
    let log = simulate_session(&net, &cfg)?;
    let steps = join_schedule(spec, &net, cfg.n_hosts)?;

    let mut active: BTreeSet<NodeId> = net
        .clients
        .iter()
        .filter(|c| host_index(c).is_some_and(|i| i < spec.initial_hosts))
        .cloned()
        .collect();
    if active.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "seed {seed}: fewer than two clients among the initial hosts"
        )));
    }
    let initial: Vec<NodeId> = active.iter().cloned().collect();
    let cov = build_covariance_matrix(&log, &initial)?;
    let (mut tree, rho) = recover_from_matrix(&net.source, &cov, &config.recovery)?;
    let rc = config.recovery.resolve(Some(&cov))?;

    let score = |tree: &RoutingTree, active: &BTreeSet<NodeId>| -> Result<(f64, Option<f64>)> {
        let truth = net.truth.restrict_to(active)?;
        let r = accuracy_report(tree, &truth, active)?;
        Ok((r.p, r.p_distinct))
    };
    let mut curve = Vec::with_capacity(steps.len() + 1);
    let (p, p_distinct) = score(&tree, &active)?;
    curve.push(CurvePoint {
        step: 0,
        n_nodes: spec.initial_hosts + cfg.n_routers,
        n_clients: active.len(),
        p,
        p_distinct,
    });
    let oracle = LogCovariance::new(&log);
    for (i, (joins, hosts)) in steps.iter().enumerate() {
        for k in joins {
            attach_peer(&mut tree, &oracle, k, rc)?;
            active.insert(k.clone());
        }
        let (p, p_distinct) = score(&tree, &active)?;
        curve.push(CurvePoint {
            step: i + 1,
            n_nodes: hosts + cfg.n_routers,
            n_clients: active.len(),
            p,
            p_distinct,
        });
    }
    tree.validate()
        .map_err(|e| Error::Internal(format!("grown tree is inconsistent: {e}")))?;
    Ok(DynamicRun {
        seed,
        rho,
        curve,
        tree: Some(TreeNode::from_tree(&tree)),
    })
}

pub fn run_dynamic_scenario(config: &ScenarioConfig) -> Result<DynamicReport> {
    config.validate()?;
    let runs: Vec<DynamicRun> = config
        .seeds
        .par_iter()
        .map(|&s| run_dynamic_once(config, s))
        .collect::<Result<_>>()?;
    let n_steps = runs[0].curve.len();
    let curve: Vec<CurveSummary> = (0..n_steps)
        .map(|i| {
            let ps: Vec<f64> = runs.iter().map(|r| r.curve[i].p).collect();
            let (mean_p, stderr) = mean_stderr(&ps);
            CurveSummary {
                step: i,
                n_nodes: runs[0].curve[i].n_nodes,
                mean_p,
                stderr,
            }
        })
        .collect();
    let drop = curve[0].mean_p - curve[n_steps - 1].mean_p;
    Ok(DynamicReport {
        config: config.clone(),
        runs,
        curve,
        drop,
    })
}
