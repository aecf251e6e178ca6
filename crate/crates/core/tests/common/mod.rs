#![allow(dead_code)]

use std::collections::BTreeMap;

use tomo_core::simulator::LinkParams;
use tomo_core::{
    dfs_order, recover_tree, CovarianceMatrix, CovarianceSource, NodeId, RecoveryConfig,
    RoutingTree, SimulatedNetwork,
};

pub fn id(s: &str) -> NodeId {
    NodeId::from(s)
}

/// Random tree with 2 + seed % (max - 1) leaves.
pub fn random_net(seed: u64, max_leaves: usize) -> SimulatedNetwork {
    let n = 2 + (seed as usize) % (max_leaves - 1);
    SimulatedNetwork::random_tree(seed, n, [0.5, 3.0])
}

pub fn analytic(net: &SimulatedNetwork, leaves: &[NodeId]) -> CovarianceMatrix {
    CovarianceMatrix::from_fn(leaves.to_vec(), |a, b| net.covariance(a, b)).unwrap()
}

pub fn recover_analytic(net: &SimulatedNetwork, leaves: &[NodeId], rho: f64) -> RoutingTree {
    let m = analytic(net, leaves);
    let order = dfs_order(&m);
    recover_tree(&net.source, &order, &m, RecoveryConfig::new(rho).unwrap()).unwrap()
}

fn root_path(tree: &RoutingTree, leaf: &NodeId) -> Vec<NodeId> {
    let mut path = vec![leaf.clone()];
    let mut cur = leaf.clone();
    while let Some(p) = tree.parent(&cur) {
        path.push(p.clone());
        cur = p.clone();
    }
    path.reverse();
    path
}

/// Number of links shared by the root paths of `a` and `b`; a leaf shares
/// its whole path with itself.
pub fn shared_links(tree: &RoutingTree, a: &NodeId, b: &NodeId) -> usize {
    let pa = root_path(tree, a);
    let pb = root_path(tree, b);
    pa.iter().zip(&pb).take_while(|(x, y)| x == y).count() - 1
}

/// Correct triples and total by direct enumeration of every ordered triple.
pub fn brute_force_accuracy(rec: &RoutingTree, truth: &RoutingTree, x: &[NodeId]) -> (u64, u64) {
    let mut correct = 0;
    let mut total = 0;
    for i in x {
        for j in x {
            for k in x {
                let r = shared_links(rec, i, j) >= shared_links(rec, i, k);
                let t = shared_links(truth, i, j) >= shared_links(truth, i, k);
                correct += u64::from(r == t);
                total += 1;
            }
        }
    }
    (correct, total)
}

pub fn quiet_link(var: f64) -> LinkParams {
    LinkParams {
        base_delay_us: 10_000.0,
        transmission_us: 8.0,
        delay_var_ms2: var,
        decorrelation: 0.0,
        loss_prob: 0.0,
        utilization: 0.0,
    }
}

/// s → r1 → r2 → {a, b}: two shared links above two private last hops.
pub fn two_shared_links(v1: f64, v2: f64, last_hop: f64) -> SimulatedNetwork {
    let mut truth = RoutingTree::new(id("s"));
    truth.add_router(&id("s"), id("r1"), v1).unwrap();
    truth.add_router(&id("r1"), id("r2"), v1 + v2).unwrap();
    truth.add_leaf(&id("r2"), id("a")).unwrap();
    truth.add_leaf(&id("r2"), id("b")).unwrap();
    let link_params: BTreeMap<NodeId, LinkParams> = [
        (id("r1"), quiet_link(v1)),
        (id("r2"), quiet_link(v2)),
        (id("a"), quiet_link(last_hop)),
        (id("b"), quiet_link(last_hop)),
    ]
    .into_iter()
    .collect();
    SimulatedNetwork {
        clients: truth.leaves().clone(),
        truth,
        link_params,
        source: id("s"),
        receiver_noise_var_ms2: 0.0,
    }
}
