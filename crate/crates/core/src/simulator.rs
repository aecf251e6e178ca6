//! Ground-truth network simulator.
//!
//! Generates a router graph, attaches hosts, routes a shortest-path tree from
//! a random source to a subset of client hosts and synthesizes packet-pair
//! measurement logs over it.
//!
//! Delay model, per tree link: a constant base delay plus transmission time,
//! plus Gaussian jitter. The jitter of a link at pair `k` is drawn once and
//! seen by every client whose path uses the link, which is what makes shared
//! links show up as covariance. Background traffic adds jitter variance in
//! proportion to its rate. Once a link's utilization passes the congestion
//! threshold, part of its jitter becomes independent per packet (the pair no
//! longer queues together) and packets start to drop.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CovarianceMatrix, CovarianceSource, IntervalMode, MeasurementLog, NodeId, RoutingTree,
};

const MAX_GENERATION_ATTEMPTS: usize = 32;
const SESSION_START_US: i64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyModel {
    /// Incremental Waxman graph: each new router links to `edges_per_router`
    /// existing routers picked with probability ∝ α·exp(-d / (β·L)).
    Waxman {
        alpha: f64,
        beta: f64,
        #[serde(default = "default_edges_per_router")]
        edges_per_router: usize,
    },
    /// Random router tree where each router has at most `arity` children.
    RandomLary { arity: usize },
}

fn default_edges_per_router() -> usize {
    2
}

impl Default for TopologyModel {
    fn default() -> Self {
        TopologyModel::Waxman {
            alpha: 0.15,
            beta: 0.2,
            edges_per_router: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossModel {
    /// Utilization above which a link is congested.
    pub congestion_threshold: f64,
    /// Drop probability of a fully congested link; scaled by congestion level.
    pub congestion_drop_prob: f64,
    /// Drop probability of every link regardless of load.
    pub base_drop_prob: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        LossModel {
            congestion_threshold: 0.8,
            congestion_drop_prob: 0.05,
            base_drop_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntervalSchedule {
    Fixed,
    /// Each interval is δ plus a uniform extra in [0, jitter_us]; sender
    /// timestamps travel with the packets.
    Timestamped { jitter_us: i64 },
}

impl Default for IntervalSchedule {
    fn default() -> Self {
        IntervalSchedule::Fixed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub n_hosts: usize,
    pub n_routers: usize,
    pub topology: TopologyModel,
    pub seed: u64,
    /// Fraction of hosts that become clients (leaves of the routing tree).
    pub client_fraction: f64,
    /// Pin the source to `h<index>` instead of drawing it.
    pub source_host: Option<usize>,
    /// Base one-way delay per link, µs.
    pub link_base_delay_us: [f64; 2],
    /// Intrinsic jitter variance per link, ms².
    pub link_delay_var_ms2: [f64; 2],
    /// Jitter variance added per MB/s of background traffic at unit load, ms².
    pub bg_var_per_mbps: f64,
    /// Range of the per-link background load multiplier.
    pub bg_load_spread: [f64; 2],
    pub bandwidth_bps: f64,
    pub packet_size_bytes: f64,
    pub pair_interval_us: i64,
    pub interval_schedule: IntervalSchedule,
    pub n_pairs: usize,
    /// Mean background traffic rate, bytes/s.
    pub bg_rate: f64,
    /// Per-packet timestamping jitter at the receiver, ms².
    pub receiver_noise_var_ms2: f64,
    /// Constant per-receiver clock offset range, µs.
    pub receiver_clock_offset_us: [i64; 2],
    pub loss: LossModel,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            n_hosts: 150,
            n_routers: 50,
            topology: TopologyModel::default(),
            seed: 0,
            client_fraction: 0.7,
            source_host: None,
            link_base_delay_us: [5_000.0, 20_000.0],
            link_delay_var_ms2: [0.01, 0.05],
            bg_var_per_mbps: 0.25,
            bg_load_spread: [0.75, 1.25],
            bandwidth_bps: 100e6,
            packet_size_bytes: 100.0,
            pair_interval_us: 30_000,
            interval_schedule: IntervalSchedule::Fixed,
            n_pairs: 2000,
            bg_rate: 5e6,
            receiver_noise_var_ms2: 0.02,
            receiver_clock_offset_us: [0, 0],
            loss: LossModel::default(),
        }
    }
}

fn check_range(field: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0] >= 0.0 && r[1] >= r[0] && r[1].is_finite()) {
        return Err(Error::config(field, format!("invalid range {r:?}")));
    }
    Ok(())
}

fn check_prob(field: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(field, format!("{p} is not a probability")));
    }
    Ok(())
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hosts < 2 {
            return Err(Error::config("n_hosts", "need at least 2 hosts"));
        }
        if self.n_routers < 1 {
            return Err(Error::config("n_routers", "need at least 1 router"));
        }
        match self.topology {
            TopologyModel::Waxman {
                alpha,
                beta,
                edges_per_router,
            } => {
                if !(alpha > 0.0 && beta > 0.0) {
                    return Err(Error::config("topology", "alpha and beta must be positive"));
                }
                if edges_per_router == 0 {
                    return Err(Error::config("topology.edges_per_router", "must be at least 1"));
                }
            }
            TopologyModel::RandomLary { arity } => {
                if arity == 0 {
                    return Err(Error::config("topology.arity", "must be at least 1"));
                }
            }
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config("client_fraction", "must be in (0, 1]"));
        }
        if let Some(s) = self.source_host {
            if s >= self.n_hosts {
                return Err(Error::config("source_host", "index out of range"));
            }
        }
        check_range("link_base_delay_us", self.link_base_delay_us)?;
        check_range("link_delay_var_ms2", self.link_delay_var_ms2)?;
        check_range("bg_load_spread", self.bg_load_spread)?;
        if !(self.bg_var_per_mbps >= 0.0 && self.bg_var_per_mbps.is_finite()) {
            return Err(Error::config("bg_var_per_mbps", "must be non-negative"));
        }
        if !(self.bandwidth_bps > 0.0) {
            return Err(Error::config("bandwidth_bps", "must be positive"));
        }
        if !(self.packet_size_bytes >= 0.0) {
            return Err(Error::config("packet_size_bytes", "must be non-negative"));
        }
        if self.pair_interval_us <= 0 {
            return Err(Error::config("pair_interval_us", "must be positive"));
        }
        if let IntervalSchedule::Timestamped { jitter_us } = self.interval_schedule {
            if jitter_us < 0 {
                return Err(Error::config("interval_schedule.jitter_us", "must be non-negative"));
            }
        }
        if self.n_pairs < 2 {
            return Err(Error::config("n_pairs", "need at least 2 pairs"));
        }
        if !(self.bg_rate >= 0.0 && self.bg_rate.is_finite()) {
            return Err(Error::config("bg_rate", "must be non-negative"));
        }
        if !(self.receiver_noise_var_ms2 >= 0.0) {
            return Err(Error::config("receiver_noise_var_ms2", "must be non-negative"));
        }
        let o = self.receiver_clock_offset_us;
        if o[0] < 0 || o[1] < o[0] {
            return Err(Error::config("receiver_clock_offset_us", "invalid range"));
        }
        if !(self.loss.congestion_threshold > 0.0 && self.loss.congestion_threshold < 1.0) {
            return Err(Error::config("loss.congestion_threshold", "must be in (0, 1)"));
        }
        check_prob("loss.congestion_drop_prob", self.loss.congestion_drop_prob)?;
        check_prob("loss.base_drop_prob", self.loss.base_drop_prob)?;
        Ok(())
    }
}

/// Parameters of one tree link, keyed by the link's downstream node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub base_delay_us: f64,
    /// Serialization time of one packet, µs.
    pub transmission_us: f64,
    /// Total jitter variance, ms².
    pub delay_var_ms2: f64,
    /// Fraction of the jitter variance that is independent per packet.
    pub decorrelation: f64,
    pub loss_prob: f64,
    pub utilization: f64,
}

impl LinkParams {
    /// Variance this link contributes to the covariance of two paths through it.
    pub fn shared_var(&self) -> f64 {
        self.delay_var_ms2 * (1.0 - self.decorrelation)
    }
}

/// Ground-truth routed tree with per-link delay parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedNetwork {
    pub truth: RoutingTree,
    pub link_params: BTreeMap<NodeId, LinkParams>,
    pub source: NodeId,
    pub clients: BTreeSet<NodeId>,
    pub receiver_noise_var_ms2: f64,
}

fn host_id(i: usize) -> NodeId {
    NodeId::new(format!("h{i}"))
}

fn router_id(i: usize) -> NodeId {
    NodeId::new(format!("r{i}"))
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

struct RouterGraph {
    // adjacency: (neighbour, base delay µs)
    adj: Vec<Vec<(usize, f64)>>,
}

impl RouterGraph {
    fn connected(&self) -> bool {
        let n = self.adj.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn add_edge(&mut self, a: usize, b: usize, delay: f64) {
        self.adj[a].push((b, delay));
        self.adj[b].push((a, delay));
    }

    /// Shortest-path predecessor of every router from `src`, ties broken by
    /// lower router index.
    fn shortest_path_tree(&self, src: usize) -> Vec<Option<usize>> {
        #[derive(PartialEq)]
        struct State(f64, usize);
        impl Eq for State {}
        impl Ord for State {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
            }
        }
        impl PartialOrd for State {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(State(0.0, src));
        while let Some(State(d, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &(v, w) in &self.adj[u] {
                let nd = d + w;
                let better = nd < dist[v] || (nd == dist[v] && pred[v].map_or(false, |p| u < p));
                if better && !done[v] {
                    dist[v] = nd;
                    pred[v] = Some(u);
                    heap.push(State(nd, v));
                }
            }
        }
        pred
    }
}

fn waxman_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    alpha: f64,
    beta: f64,
    m: usize,
    delay: [f64; 2],
) -> RouterGraph {
    let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let scale = beta * std::f64::consts::SQRT_2;
    let mut g = RouterGraph { adj: vec![Vec::new(); n] };
    for v in 1..n {
        let mut weights: Vec<f64> = (0..v)
            .map(|u| {
                let d = ((pos[u].0 - pos[v].0).powi(2) + (pos[u].1 - pos[v].1).powi(2)).sqrt();
                alpha * (-d / scale).exp()
            })
            .collect();
        for _ in 0..m.min(v) {
            let total: f64 = weights.iter().sum();
            let mut x = rng.gen::<f64>() * total;
            let mut pick = weights.iter().rposition(|w| *w > 0.0).unwrap();
            for (u, w) in weights.iter().enumerate() {
                if *w > 0.0 && x < *w {
                    pick = u;
                    break;
                }
                x -= w;
            }
            weights[pick] = 0.0;
            let d = uniform(rng, delay);
            g.add_edge(pick, v, d);
        }
    }
    g
}

fn lary_graph(rng: &mut ChaCha8Rng, n: usize, arity: usize, delay: [f64; 2]) -> RouterGraph {
    let mut g = RouterGraph { adj: vec![Vec::new(); n] };
    let mut kids = vec![0usize; n];
    for v in 1..n {
        let open: Vec<usize> = (0..v).filter(|&u| kids[u] < arity).collect();
        let u = open[rng.gen_range(0..open.len())];
        kids[u] += 1;
        let d = uniform(rng, delay);
        g.add_edge(u, v, d);
    }
    g
}

/// Generates a network deterministically from `config.seed`.
pub fn generate_topology(config: &SimulatorConfig) -> Result<SimulatedNetwork> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let graph = match config.topology {
            TopologyModel::Waxman {
                alpha,
                beta,
                edges_per_router,
            } => waxman_graph(
                &mut rng,
                config.n_routers,
                alpha,
                beta,
                edges_per_router,
                config.link_base_delay_us,
            ),
            TopologyModel::RandomLary { arity } => {
                lary_graph(&mut rng, config.n_routers, arity, config.link_base_delay_us)
            }
        };
        if !graph.connected() {
            continue;
        }
        return Ok(build_network(config, &mut rng, &graph));
    }
    Err(Error::config(
        "topology",
        format!("no connected router graph after {MAX_GENERATION_ATTEMPTS} attempts"),
    ))
}

fn build_network(config: &SimulatorConfig, rng: &mut ChaCha8Rng, graph: &RouterGraph) -> SimulatedNetwork {
    let n_hosts = config.n_hosts;
    let attach: Vec<usize> = (0..n_hosts)
        .map(|_| rng.gen_range(0..config.n_routers))
        .collect();
    let access_delay: Vec<f64> = (0..n_hosts)
        .map(|_| uniform(rng, config.link_base_delay_us))
        .collect();
    let source_idx = config
        .source_host
        .unwrap_or_else(|| rng.gen_range(0..n_hosts));
    let others: Vec<usize> = (0..n_hosts).filter(|&h| h != source_idx).collect();
    let n_clients = ((config.client_fraction * n_hosts as f64).round() as usize)
        .clamp(1, others.len());
    let mut client_idx: Vec<usize> = sample(rng, others.len(), n_clients)
        .into_iter()
        .map(|i| others[i])
        .collect();
    client_idx.sort_unstable();

    let src_router = attach[source_idx];
    let pred = graph.shortest_path_tree(src_router);
    let edge_delay = |a: usize, b: usize| -> f64 {
        graph.adj[a]
            .iter()
            .filter(|(v, _)| *v == b)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min)
    };

    // tree edges as (parent, child) over routers, in root-to-leaf order
    let mut used = BTreeSet::new();
    for &c in &client_idx {
        let mut r = attach[c];
        while used.insert(r) {
            match pred[r] {
                Some(p) => r = p,
                None => break,
            }
        }
    }
    let source = host_id(source_idx);
    let mut truth = RoutingTree::new(source.clone());
    let mut link_params = BTreeMap::new();
    let mut downstream_clients: BTreeMap<NodeId, usize> = BTreeMap::new();

    struct RawLink {
        child: NodeId,
        base: f64,
        intrinsic: f64,
        bg_weight: f64,
    }
    let mut raw = Vec::new();

    truth
        .add_router(&source, router_id(src_router), 0.0)
        .expect("fresh tree");
    raw.push(RawLink {
        child: router_id(src_router),
        base: access_delay[source_idx],
        intrinsic: uniform(rng, config.link_delay_var_ms2),
        bg_weight: 0.0,
    });
    // BFS over the used routers so parents precede children
    let mut frontier = vec![src_router];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for v in used.iter().copied().filter(|&v| pred[v] == Some(u)) {
                truth
                    .add_router(&router_id(u), router_id(v), 0.0)
                    .expect("routers are unique");
                raw.push(RawLink {
                    child: router_id(v),
                    base: edge_delay(u, v),
                    intrinsic: uniform(rng, config.link_delay_var_ms2),
                    bg_weight: uniform(rng, config.bg_load_spread),
                });
                next.push(v);
            }
        }
        frontier = next;
    }
    for &c in &client_idx {
        truth
            .add_leaf(&router_id(attach[c]), host_id(c))
            .expect("clients are unique");
        raw.push(RawLink {
            child: host_id(c),
            base: access_delay[c],
            intrinsic: uniform(rng, config.link_delay_var_ms2),
            bg_weight: 0.0,
        });
    }
    for c in &client_idx {
        for a in truth.ancestors(&host_id(*c)) {
            *downstream_clients.entry(a.clone()).or_default() += 1;
        }
        *downstream_clients.entry(host_id(*c)).or_default() += 1;
    }

    let transmission_us = config.packet_size_bytes * 8.0 / config.bandwidth_bps * 1e6;
    let session_rate = config.packet_size_bytes * 1e6 / config.pair_interval_us as f64;
    let thr = config.loss.congestion_threshold;
    for l in raw {
        let bg_bytes = config.bg_rate * l.bg_weight;
        let own_bytes = session_rate * downstream_clients[&l.child] as f64;
        let utilization = (bg_bytes + own_bytes) * 8.0 / config.bandwidth_bps;
        let decorrelation = ((utilization - thr) / (1.0 - thr)).clamp(0.0, 1.0);
        let delay_var_ms2 = l.intrinsic + config.bg_var_per_mbps * bg_bytes / 1e6;
        let loss_prob = (config.loss.base_drop_prob
            + config.loss.congestion_drop_prob * decorrelation)
            .min(1.0);
        link_params.insert(
            l.child,
            LinkParams {
                base_delay_us: l.base,
                transmission_us,
                delay_var_ms2,
                decorrelation,
                loss_prob,
                utilization,
            },
        );
    }
    label_truth(&mut truth, &link_params);
    SimulatedNetwork {
        truth,
        link_params,
        source,
        clients: client_idx.into_iter().map(host_id).collect(),
        receiver_noise_var_ms2: config.receiver_noise_var_ms2,
    }
}

/// Sets every router label to the covariance accumulated from the root.
fn label_truth(tree: &mut RoutingTree, params: &BTreeMap<NodeId, LinkParams>) {
    let mut rebuilt = RoutingTree::new(tree.root().clone());
    let mut stack = vec![(tree.root().clone(), 0.0)];
    while let Some((node, acc)) = stack.pop() {
        for c in tree.children(&node) {
            if tree.is_leaf(c) {
                rebuilt.add_leaf(&node, c.clone()).unwrap();
            } else {
                let cov = acc + params[c].shared_var();
                rebuilt.add_router(&node, c.clone(), cov).unwrap();
                stack.push((c.clone(), cov));
            }
        }
    }
    *tree = rebuilt;
}

impl SimulatedNetwork {
    /// Random tree with `n_leaves` leaves `h0..`, random branching including
    /// unary relay routers, and per-link variances drawn from `var_range`.
    /// No loss, no background traffic.
    pub fn random_tree(seed: u64, n_leaves: usize, var_range: [f64; 2]) -> SimulatedNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = NodeId::new("s");
        let mut tree = RoutingTree::new(source.clone());
        let mut routers = vec![source.clone()];
        let mut next_router = 0usize;
        let mut new_router = |tree: &mut RoutingTree, parent: &NodeId, routers: &mut Vec<NodeId>| {
            let r = router_id(next_router);
            next_router += 1;
            tree.add_router(parent, r.clone(), 0.0).unwrap();
            routers.push(r.clone());
            r
        };
        let first = new_router(&mut tree, &source, &mut routers);
        for i in 0..n_leaves {
            let mut at = if rng.gen_bool(0.15) {
                source.clone()
            } else if rng.gen_bool(0.5) {
                first.clone()
            } else {
                routers[rng.gen_range(0..routers.len())].clone()
            };
            // grow a short chain below the pick; chains of >1 create relays
            let grow = rng.gen_range(0..3);
            for _ in 0..grow {
                at = new_router(&mut tree, &at, &mut routers);
            }
            tree.add_leaf(&at, NodeId::new(format!("h{i}"))).unwrap();
        }
        let leaves = tree.leaves().clone();
        let tree = tree.restrict_to(&leaves).unwrap();
        let mut link_params = BTreeMap::new();
        let mut nodes: Vec<NodeId> = tree.routers().cloned().collect();
        nodes.extend(tree.leaves().iter().cloned());
        for n in nodes {
            link_params.insert(
                n,
                LinkParams {
                    base_delay_us: 10_000.0,
                    transmission_us: 8.0,
                    delay_var_ms2: uniform(&mut rng, var_range),
                    decorrelation: 0.0,
                    loss_prob: 0.0,
                    utilization: 0.0,
                },
            );
        }
        let mut truth = tree;
        label_truth(&mut truth, &link_params);
        SimulatedNetwork {
            clients: truth.leaves().clone(),
            truth,
            link_params,
            source,
            receiver_noise_var_ms2: 0.0,
        }
    }

    /// Smallest covariance contribution of any link.
    pub fn min_link_var(&self) -> f64 {
        self.link_params
            .values()
            .map(LinkParams::shared_var)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn set_link_loss(&mut self, child: &NodeId, p: f64) -> Result<()> {
        check_prob("loss_prob", p)?;
        let l = self
            .link_params
            .get_mut(child)
            .ok_or_else(|| Error::input(format!("no link into {child}")))?;
        l.loss_prob = p;
        Ok(())
    }

    pub fn clients_sorted(&self) -> Vec<NodeId> {
        self.clients.iter().cloned().collect()
    }

    /// Links (by downstream node) on the path from the source to `node`.
    fn path_links(&self, node: &NodeId) -> Vec<NodeId> {
        let mut links = vec![node.clone()];
        links.extend(
            self.truth
                .ancestors(node)
                .filter(|a| *a != self.truth.root())
                .cloned(),
        );
        links.reverse();
        links
    }

    fn check_client(&self, c: &NodeId) -> Result<()> {
        if !self.clients.contains(c) {
            return Err(Error::input(format!("{c} is not a client")));
        }
        Ok(())
    }

    /// Variance of the whole path delay seen at client `i`, ms².
    pub fn analytic_path_variance(&self, i: &NodeId) -> Result<f64> {
        self.check_client(i)?;
        Ok(self
            .path_links(i)
            .iter()
            .map(|l| self.link_params[l].delay_var_ms2)
            .sum::<f64>()
            + self.receiver_noise_var_ms2)
    }

    /// Noiseless matrix over all clients (diagonal = path variance).
    pub fn analytic_matrix(&self) -> Result<CovarianceMatrix> {
        CovarianceMatrix::from_fn(self.clients_sorted(), |a, b| self.covariance(a, b))
    }
}

/// Σ of the shared jitter variance over links common to both clients' paths.
pub fn analytic_covariance(net: &SimulatedNetwork, i: &NodeId, j: &NodeId) -> Result<f64> {
    net.check_client(i)?;
    net.check_client(j)?;
    if i == j {
        return Err(Error::input(format!("analytic covariance of {i} with itself")));
    }
    let pi = net.path_links(i);
    let pj = net.path_links(j);
    Ok(pi
        .iter()
        .zip(&pj)
        .take_while(|(a, b)| a == b)
        .map(|(l, _)| net.link_params[l].shared_var())
        .sum())
}

impl CovarianceSource for SimulatedNetwork {
    fn covariance(&self, a: &NodeId, b: &NodeId) -> Result<f64> {
        if a == b {
            self.analytic_path_variance(a)
        } else {
            analytic_covariance(self, a, b)
        }
    }
}

/// Synthesizes one measurement session over all clients of `net`.
/// Uses `config` for timing, pair count and the session seed.
pub fn simulate_session(net: &SimulatedNetwork, config: &SimulatorConfig) -> Result<MeasurementLog> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let n = config.n_pairs;

    let mut sender_ts = Vec::with_capacity(n);
    let mut t = SESSION_START_US;
    let interval_mode = match config.interval_schedule {
        IntervalSchedule::Fixed => IntervalMode::Fixed {
            delta_us: config.pair_interval_us,
        },
        IntervalSchedule::Timestamped { .. } => IntervalMode::Timestamped,
    };
    for _ in 0..n {
        sender_ts.push(t);
        t += config.pair_interval_us;
        if let IntervalSchedule::Timestamped { jitter_us } = config.interval_schedule {
            t += rng.gen_range(0..=jitter_us);
        }
    }

    let links: Vec<NodeId> = net.link_params.keys().cloned().collect();
    let link_index: BTreeMap<&NodeId, usize> = links.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let params: Vec<LinkParams> = links.iter().map(|l| net.link_params[l]).collect();
    let sd_us: Vec<f64> = params.iter().map(|p| p.delay_var_ms2.sqrt() * 1e3).collect();
    let clients = net.clients_sorted();
    let paths: Vec<Vec<usize>> = clients
        .iter()
        .map(|c| net.path_links(c).iter().map(|l| link_index[l]).collect())
        .collect();
    let offsets: Vec<i64> = clients
        .iter()
        .map(|_| {
            let [lo, hi] = config.receiver_clock_offset_us;
            rng.gen_range(lo..=hi)
        })
        .collect();
    let noise_sd_us = net.receiver_noise_var_ms2.sqrt() * 1e3;

    let mut arrivals: Vec<Vec<Option<i64>>> = vec![Vec::with_capacity(n); clients.len()];
    let mut shared = vec![0.0f64; links.len()];
    for &sent in &sender_ts {
        for z in shared.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        for (ci, path) in paths.iter().enumerate() {
            let mut delay = 0.0;
            let mut lost = false;
            for &l in path {
                let p = &params[l];
                let jitter = if p.decorrelation > 0.0 {
                    let own: f64 = StandardNormal.sample(&mut rng);
                    (1.0 - p.decorrelation).sqrt() * shared[l] + p.decorrelation.sqrt() * own
                } else {
                    shared[l]
                };
                delay += (p.base_delay_us + p.transmission_us + sd_us[l] * jitter).max(0.0);
                if p.loss_prob > 0.0 && rng.gen_bool(p.loss_prob) {
                    lost = true;
                }
            }
            if noise_sd_us > 0.0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                delay += noise_sd_us * e;
            }
            let arrival = sent + offsets[ci] + delay.max(0.0).round() as i64;
            arrivals[ci].push((!lost).then_some(arrival.max(sent)));
        }
    }
    MeasurementLog::new(interval_mode, sender_ts, clients.into_iter().zip(arrivals).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dce::build_covariance_matrix;

    fn small_config(seed: u64) -> SimulatorConfig {
        SimulatorConfig {
            n_hosts: 12,
            n_routers: 6,
            seed,
            n_pairs: 200,
            ..SimulatorConfig::default()
        }
    }

    #[test]
    fn two_hosts_one_router() {
        let cfg = SimulatorConfig {
            n_hosts: 2,
            n_routers: 1,
            ..small_config(3)
        };
        let net = generate_topology(&cfg).unwrap();
        assert_eq!(net.clients.len(), 1);
        let client = net.clients.iter().next().unwrap();
        assert_ne!(client, &net.source);
        let r = net.truth.parent(client).unwrap();
        assert_eq!(net.truth.parent(r), Some(&net.source));
        assert_eq!(net.truth.len(), 3);
    }

    #[test]
    fn default_scale_has_105_clients() {
        let net = generate_topology(&SimulatorConfig::default()).unwrap();
        assert_eq!(net.clients.len(), 105);
        assert_eq!(net.truth.leaves().len(), 105);
        net.truth.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_topology(&small_config(9)).unwrap();
        let b = generate_topology(&small_config(9)).unwrap();
        assert_eq!(a, b);
        let c = generate_topology(&small_config(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lary_topology_respects_arity() {
        let cfg = SimulatorConfig {
            topology: TopologyModel::RandomLary { arity: 2 },
            n_routers: 15,
            n_hosts: 30,
            ..small_config(4)
        };
        let net = generate_topology(&cfg).unwrap();
        net.truth.validate().unwrap();
    }

    #[test]
    fn quiet_network_gives_flat_series() {
        let cfg = SimulatorConfig {
            link_delay_var_ms2: [0.0, 0.0],
            bg_rate: 0.0,
            receiver_noise_var_ms2: 0.0,
            ..small_config(5)
        };
        let net = generate_topology(&cfg).unwrap();
        let log = simulate_session(&net, &cfg).unwrap();
        let clients = net.clients_sorted();
        let m = build_covariance_matrix(&log, &clients).unwrap();
        assert!(m.rows().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn session_is_deterministic() {
        let cfg = small_config(6);
        let net = generate_topology(&cfg).unwrap();
        assert_eq!(simulate_session(&net, &cfg).unwrap(), simulate_session(&net, &cfg).unwrap());
    }

    #[test]
    fn last_hop_loss_rate() {
        let cfg = SimulatorConfig {
            n_pairs: 4000,
            bg_rate: 0.0,
            ..small_config(7)
        };
        let mut net = generate_topology(&cfg).unwrap();
        let victim = net.clients_sorted()[0].clone();
        net.set_link_loss(&victim, 0.1).unwrap();
        let log = simulate_session(&net, &cfg).unwrap();
        let got = log.arrival_count(&victim) as f64;
        // binomial: mean 0.9 n, sd sqrt(n · 0.09)
        let mean = 0.9 * 4000.0;
        let sd = (4000.0f64 * 0.1 * 0.9).sqrt();
        assert!((got - mean).abs() < 4.0 * sd, "{got}");
        let other = &net.clients_sorted()[1];
        assert_eq!(log.arrival_count(other), 4000);
    }

    #[test]
    fn heavy_background_congests_links() {
        let cfg = SimulatorConfig {
            bg_rate: 12e6,
            ..small_config(8)
        };
        let net = generate_topology(&cfg).unwrap();
        assert!(net.link_params.values().any(|l| l.decorrelation > 0.0 && l.loss_prob > 0.0));
        let calm = generate_topology(&SimulatorConfig { bg_rate: 4e6, ..cfg }).unwrap();
        assert!(calm.link_params.values().all(|l| l.decorrelation == 0.0));
    }

    #[test]
    fn analytic_covariance_bounded_by_path_variance() {
        let net = generate_topology(&small_config(11)).unwrap();
        let c = net.clients_sorted();
        for i in &c {
            for j in &c {
                if i != j {
                    let s = analytic_covariance(&net, i, j).unwrap();
                    assert!(s >= 0.0);
                    assert!(s <= net.analytic_path_variance(i).unwrap());
                    assert!(s <= net.analytic_path_variance(j).unwrap());
                }
            }
        }
        assert!(analytic_covariance(&net, &c[0], &NodeId::new("nope")).is_err());
    }

    #[test]
    fn random_tree_shapes() {
        for seed in 0..50 {
            let net = SimulatedNetwork::random_tree(seed, 7, [1.0, 3.0]);
            assert_eq!(net.truth.leaves().len(), 7);
            net.truth.validate().unwrap();
            assert!(net.min_link_var() >= 1.0);
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = SimulatorConfig { n_hosts: 1, ..Default::default() };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "n_hosts"),
            other => panic!("{other:?}"),
        }
    }
}
