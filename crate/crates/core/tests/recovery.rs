mod common;

use proptest::prelude::*;
use tomo_core::model::skeleton_signature;
use tomo_core::{
    dfs_order, is_valid_dfs_order, recover_tree, trees_topologically_equal, CovarianceMatrix,
    NodeId, RecoveryConfig,
};

use common::{analytic, random_net, recover_analytic};

#[test]
fn analytic_orders_are_valid_dfs_orders() {
    for seed in 0..100 {
        let net = random_net(seed, 10);
        let m = net.analytic_matrix().unwrap();
        let mut order = dfs_order(&m);
        assert!(is_valid_dfs_order(&order, &m, 0.0), "seed {seed}: {order:?}");
        order.reverse();
        assert!(is_valid_dfs_order(&order, &m, 0.0), "seed {seed} reversed");
    }
}

#[test]
fn ordering_is_deterministic() {
    let net = random_net(42, 10);
    let m = net.analytic_matrix().unwrap();
    assert_eq!(dfs_order(&m), dfs_order(&m));
}

#[test]
fn exact_recovery_for_any_rho_below_min_link() {
    for seed in 0..100 {
        let net = random_net(seed, 10);
        let v_min = net.min_link_var();
        let leaves = net.clients_sorted();
        for frac in [0.05, 0.5, 0.95] {
            let tree = recover_analytic(&net, &leaves, frac * v_min);
            tree.validate().unwrap();
            assert!(
                trees_topologically_equal(&tree, &net.truth).unwrap(),
                "seed {seed}, rho {}:\n{}\n{}",
                frac * v_min,
                skeleton_signature(&tree),
                skeleton_signature(&net.truth)
            );
        }
    }
}

#[test]
fn labels_stay_near_input_covariances() {
    for seed in 0..50 {
        let net = random_net(seed, 10);
        let rho = 0.5 * net.min_link_var();
        let leaves = net.clients_sorted();
        let m = analytic(&net, &leaves);
        let tree = recover_analytic(&net, &leaves, rho);
        let off: Vec<f64> = m.off_diagonal().collect();
        for r in tree.routers().filter(|r| *r != tree.root()) {
            let label = tree.router_cov(r).unwrap();
            assert!(
                off.iter().any(|c| (c - label).abs() <= rho),
                "seed {seed}: label {label} of {r}"
            );
        }
    }
}

#[test]
fn scaling_matrix_and_rho_keeps_topology() {
    for seed in 0..50 {
        let net = random_net(seed, 10);
        let rho = 0.5 * net.min_link_var();
        let m = net.analytic_matrix().unwrap();
        let base = recover_tree(&net.source, &dfs_order(&m), &m, RecoveryConfig::new(rho).unwrap()).unwrap();
        for gamma in [1e-3, 7.0, 1e4] {
            let s = m.scaled(gamma);
            let t = recover_tree(&net.source, &dfs_order(&s), &s, RecoveryConfig::new(gamma * rho).unwrap())
                .unwrap();
            assert!(trees_topologically_equal(&base, &t).unwrap(), "seed {seed}, gamma {gamma}");
        }
    }
}

#[test]
fn topological_equality_is_an_equivalence() {
    let trees: Vec<_> = (0..30u64)
        .map(|s| tomo_core::SimulatedNetwork::random_tree(s, 4, [1.0, 2.0]).truth)
        .collect();
    for a in &trees {
        assert!(trees_topologically_equal(a, a).unwrap());
        for b in &trees {
            let ab = trees_topologically_equal(a, b).unwrap();
            assert_eq!(ab, trees_topologically_equal(b, a).unwrap());
            for c in &trees {
                if ab && trees_topologically_equal(b, c).unwrap() {
                    assert!(trees_topologically_equal(a, c).unwrap());
                }
            }
        }
    }
}

fn noisy(m: &CovarianceMatrix, eps: &[f64]) -> CovarianceMatrix {
    let n = m.len();
    CovarianceMatrix::from_fn(m.receivers().to_vec(), |a, b| {
        let (i, j) = (m.index_of(a).unwrap(), m.index_of(b).unwrap());
        if i == j {
            return Ok(m.at(i, i));
        }
        let (i, j) = (i.min(j), i.max(j));
        Ok(m.at(i, j) + eps[(i * n + j) % eps.len()])
    })
    .unwrap()
}

proptest! {
    #[test]
    fn noisy_recovery_keeps_tree_invariants(
        seed in 0u64..1000,
        eps in prop::collection::vec(-0.8f64..0.8, 1..50),
        rho in 0.05f64..1.0,
    ) {
        let net = random_net(seed, 12);
        let m = noisy(&net.analytic_matrix().unwrap(), &eps);
        let order = dfs_order(&m);
        let mut sorted = order.clone();
        sorted.sort();
        prop_assert_eq!(&sorted, &net.clients_sorted());
        let tree = recover_tree(&net.source, &order, &m, RecoveryConfig::new(rho).unwrap()).unwrap();
        tree.validate().unwrap();
        let leaves: Vec<NodeId> = tree.leaves().iter().cloned().collect();
        prop_assert_eq!(leaves, net.clients_sorted());
    }
}
