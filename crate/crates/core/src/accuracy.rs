//! Tomography accuracy: the fraction of ordered leaf triples (i, j, k) for
//! which "i shares at least as long a path with j as with k" evaluates the
//! same on the recovered and the true tree.
//!
//! Shared-path lengths count links. A leaf's shared path with itself is its
//! full depth, so triples with repeated leaves always classify correctly.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{shared_path_length, NodeId, RoutingTree};

fn self_or_shared(tree: &RoutingTree, a: &NodeId, b: &NodeId) -> Result<usize> {
    if a == b {
        if !tree.is_leaf(a) {
            return Err(Error::input(format!("{a} is not a leaf")));
        }
        tree.depth(a)
    } else {
        shared_path_length(tree, a, b)
    }
}

/// 1 when the recovered tree orders (i, j) against (i, k) like the truth does.
pub fn classify_triple(
    i: &NodeId,
    j: &NodeId,
    k: &NodeId,
    recovered: &RoutingTree,
    truth: &RoutingTree,
) -> Result<u8> {
    let rec = self_or_shared(recovered, i, j)? >= self_or_shared(recovered, i, k)?;
    let tru = self_or_shared(truth, i, j)? >= self_or_shared(truth, i, k)?;
    Ok(u8::from(rec == tru))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Accuracy over all |X|³ ordered triples.
    pub p: f64,
    /// Accuracy over triples of three distinct leaves; `None` below 3 leaves.
    pub p_distinct: Option<f64>,
    pub correct: u64,
    pub total: u64,
    pub n_leaves: usize,
}

/// Root-to-leaf paths indexed for fast shared-path lookups.
struct PathIndex {
    // per leaf: node → depth for every node on the root path (root depth 0)
    depth_of: Vec<HashMap<NodeId, usize>>,
    paths: Vec<Vec<NodeId>>,
}

impl PathIndex {
    fn new(tree: &RoutingTree, leaves: &[NodeId]) -> Result<Self> {
        let mut depth_of = Vec::with_capacity(leaves.len());
        let mut paths = Vec::with_capacity(leaves.len());
        for l in leaves {
            if !tree.is_leaf(l) {
                return Err(Error::input(format!("{l} is not a leaf of the tree")));
            }
            let mut path: Vec<NodeId> = tree.ancestors(l).cloned().collect();
            path.reverse();
            path.push(l.clone());
            depth_of.push(path.iter().enumerate().map(|(d, n)| (n.clone(), d)).collect());
            paths.push(path);
        }
        Ok(PathIndex { depth_of, paths })
    }

    /// Shared-path length of every leaf with `anchor` (own depth for itself).
    fn shares(&self, anchor: usize) -> Vec<usize> {
        let own = &self.depth_of[anchor];
        self.paths
            .iter()
            .map(|path| {
                path.iter()
                    .rev()
                    .find_map(|n| own.get(n).copied())
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Exact accuracy over the leaf set `x`, counting by groups of equal
/// (recovered, true) shared-path values per anchor.
pub fn accuracy_report(
    recovered: &RoutingTree,
    truth: &RoutingTree,
    x: &BTreeSet<NodeId>,
) -> Result<AccuracyReport> {
    if x.is_empty() {
        return Err(Error::input("empty leaf set"));
    }
    let leaves: Vec<NodeId> = x.iter().cloned().collect();
    let rec = PathIndex::new(recovered, &leaves)?;
    let tru = PathIndex::new(truth, &leaves)?;
    let n = leaves.len() as u64;
    let mut correct: u64 = 0;
    for anchor in 0..leaves.len() {
        let mut groups: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (a, b) in rec.shares(anchor).into_iter().zip(tru.shares(anchor)) {
            *groups.entry((a, b)).or_default() += 1;
        }
        let groups: Vec<((usize, usize), u64)> = groups.into_iter().collect();
        for &((a1, b1), c1) in &groups {
            for &((a2, b2), c2) in &groups {
                if (a1 >= a2) == (b1 >= b2) {
                    correct += c1 * c2;
                }
            }
        }
    }
    let total = n * n * n;
    let distinct_total = n * n.saturating_sub(1) * n.saturating_sub(2);
    let p_distinct = (distinct_total > 0).then(|| {
        let degenerate = total - distinct_total;
        (correct - degenerate) as f64 / distinct_total as f64
    });
    Ok(AccuracyReport {
        p: correct as f64 / total as f64,
        p_distinct,
        correct,
        total,
        n_leaves: leaves.len(),
    })
}

/// Tomography accuracy p over `x`.
pub fn tomography_accuracy(
    recovered: &RoutingTree,
    truth: &RoutingTree,
    x: &BTreeSet<NodeId>,
) -> Result<f64> {
    accuracy_report(recovered, truth, x).map(|r| r.p)
}
