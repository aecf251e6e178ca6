//! Domain types shared by every stage of the pipeline: node identifiers,
//! routing trees, measurement logs, delay series and covariance matrices.
//!
//! Timestamps are integer microseconds. Covariances are reported in ms²
//! (µs² / 10⁶).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prefix reserved for routers created by inference. Host ids may not use it.
pub const SYNTHETIC_PREFIX: char = '#';

/// Opaque node identifier. Hosts and routers share one namespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_synthetic(&self) -> bool {
        self.0.starts_with(SYNTHETIC_PREFIX)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Rooted routing tree. Leaves are hosts; internal non-root nodes are routers
/// labelled with the covariance (ms²) of the shared path from the root to them.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTree {
    root: NodeId,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    parent: BTreeMap<NodeId, NodeId>,
    router_cov: BTreeMap<NodeId, f64>,
    leaves: BTreeSet<NodeId>,
    next_synthetic: u64,
}

impl RoutingTree {
    pub fn new(root: NodeId) -> Self {
        let mut children = BTreeMap::new();
        children.insert(root.clone(), Vec::new());
        let mut router_cov = BTreeMap::new();
        router_cov.insert(root.clone(), 0.0);
        RoutingTree {
            root,
            children,
            parent: BTreeMap::new(),
            router_cov,
            leaves: BTreeSet::new(),
            next_synthetic: 1,
        }
    }

    pub fn root(&self) -> &NodeId {
        &self.root
    }

    pub fn leaves(&self) -> &BTreeSet<NodeId> {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.children.len() + self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.children.contains_key(id) || self.leaves.contains(id)
    }

    pub fn is_leaf(&self, id: &NodeId) -> bool {
        self.leaves.contains(id)
    }

    /// Internal nodes other than the root.
    pub fn routers(&self) -> impl Iterator<Item = &NodeId> {
        self.children.keys().filter(move |id| **id != self.root)
    }

    pub fn parent(&self, id: &NodeId) -> Option<&NodeId> {
        self.parent.get(id)
    }

    pub fn children(&self, id: &NodeId) -> &[NodeId] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Covariance label of an internal node; the root is always 0.
    pub fn router_cov(&self, id: &NodeId) -> Option<f64> {
        self.router_cov.get(id).copied()
    }

    /// Ancestors of `id`, nearest first, ending with the root.
    pub fn ancestors<'a>(&'a self, id: &NodeId) -> Ancestors<'a> {
        Ancestors {
            tree: self,
            next: self.parent.get(id),
        }
    }

    /// Number of links from the root to `id`.
    pub fn depth(&self, id: &NodeId) -> Result<usize> {
        if !self.contains(id) {
            return Err(Error::input(format!("unknown node {id}")));
        }
        Ok(self.ancestors(id).count())
    }

    /// Lowest common ancestor of two nodes (a node is its own ancestor here).
    pub fn lca(&self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        for id in [a, b] {
            if !self.contains(id) {
                return Err(Error::input(format!("unknown node {id}")));
            }
        }
        let mut path_a: BTreeSet<&NodeId> = self.ancestors(a).collect();
        path_a.insert(a);
        if path_a.contains(b) {
            return Ok(b.clone());
        }
        self.ancestors(b)
            .find(|n| path_a.contains(n))
            .cloned()
            .ok_or_else(|| Error::Internal(format!("{a} and {b} share no ancestor")))
    }

    /// A fresh synthetic router id not present in the tree.
    pub fn fresh_router_id(&mut self) -> NodeId {
        loop {
            let id = NodeId(format!("{SYNTHETIC_PREFIX}r{}", self.next_synthetic));
            self.next_synthetic += 1;
            if !self.contains(&id) {
                return id;
            }
        }
    }

    fn check_new(&self, id: &NodeId) -> Result<()> {
        if self.contains(id) {
            return Err(Error::input(format!("node {id} already in tree")));
        }
        Ok(())
    }

    fn check_internal(&self, id: &NodeId) -> Result<()> {
        if !self.children.contains_key(id) {
            return Err(Error::input(format!("{id} is not an internal node")));
        }
        Ok(())
    }

    pub fn add_router(&mut self, parent: &NodeId, id: NodeId, cov: f64) -> Result<()> {
        self.check_internal(parent)?;
        self.check_new(&id)?;
        self.children.get_mut(parent).unwrap().push(id.clone());
        self.parent.insert(id.clone(), parent.clone());
        self.children.insert(id.clone(), Vec::new());
        self.router_cov.insert(id, cov);
        Ok(())
    }

    pub fn add_leaf(&mut self, parent: &NodeId, id: NodeId) -> Result<()> {
        self.check_internal(parent)?;
        self.check_new(&id)?;
        self.children.get_mut(parent).unwrap().push(id.clone());
        self.parent.insert(id.clone(), parent.clone());
        self.leaves.insert(id);
        Ok(())
    }

    /// Insert a new router between `child` and its current parent, taking
    /// over `child`'s position in the parent's child list.
    pub fn insert_router_above(&mut self, child: &NodeId, id: NodeId, cov: f64) -> Result<()> {
        let parent = self
            .parent
            .get(child)
            .cloned()
            .ok_or_else(|| Error::input(format!("{child} has no parent")))?;
        self.check_new(&id)?;
        let siblings = self.children.get_mut(&parent).unwrap();
        let pos = siblings.iter().position(|c| c == child).unwrap();
        siblings[pos] = id.clone();
        self.parent.insert(id.clone(), parent);
        self.children.insert(id.clone(), vec![child.clone()]);
        self.router_cov.insert(id.clone(), cov);
        self.parent.insert(child.clone(), id);
        Ok(())
    }

    /// Move a non-root node (with its subtree) under `new_parent`.
    pub fn move_node(&mut self, node: &NodeId, new_parent: &NodeId) -> Result<()> {
        self.check_internal(new_parent)?;
        if self.ancestors(new_parent).any(|a| a == node) || node == new_parent {
            return Err(Error::input(format!("moving {node} under {new_parent} creates a cycle")));
        }
        let old = self
            .parent
            .get(node)
            .cloned()
            .ok_or_else(|| Error::input(format!("{node} has no parent")))?;
        self.children.get_mut(&old).unwrap().retain(|c| c != node);
        self.children.get_mut(new_parent).unwrap().push(node.clone());
        self.parent.insert(node.clone(), new_parent.clone());
        Ok(())
    }

    /// Remove a leaf and its edge. Routers are left untouched.
    pub fn remove_leaf(&mut self, id: &NodeId) -> Result<NodeId> {
        if !self.leaves.remove(id) {
            return Err(Error::input(format!("{id} is not a leaf")));
        }
        let parent = self.parent.remove(id).unwrap();
        self.children.get_mut(&parent).unwrap().retain(|c| c != id);
        Ok(parent)
    }

    /// Remove a childless non-root router.
    pub fn remove_empty_router(&mut self, id: &NodeId) -> Result<NodeId> {
        if *id == self.root || !self.children(id).is_empty() || !self.children.contains_key(id) {
            return Err(Error::input(format!("{id} is not an empty router")));
        }
        self.children.remove(id);
        self.router_cov.remove(id);
        let parent = self.parent.remove(id).unwrap();
        self.children.get_mut(&parent).unwrap().retain(|c| c != id);
        Ok(parent)
    }

    /// Splice out a non-root router with exactly one child; the child takes
    /// its place under the router's parent.
    pub fn splice_router(&mut self, id: &NodeId) -> Result<()> {
        if *id == self.root || self.children(id).len() != 1 {
            return Err(Error::input(format!("{id} is not a unary router")));
        }
        let child = self.children[id][0].clone();
        let parent = self.parent[id].clone();
        let siblings = self.children.get_mut(&parent).unwrap();
        let pos = siblings.iter().position(|c| c == id).unwrap();
        siblings[pos] = child.clone();
        self.parent.insert(child, parent);
        self.parent.remove(id);
        self.children.remove(id);
        self.router_cov.remove(id);
        Ok(())
    }

    /// Leaves in the subtree under `id` (the node itself if it is a leaf).
    pub fn descendant_leaves(&self, id: &NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if self.leaves.contains(n) {
                out.push(n.clone());
            }
            stack.extend(self.children(n).iter().rev());
        }
        out
    }

    /// Leaves in depth-first order following child-list order.
    pub fn dfs_leaves(&self) -> Vec<NodeId> {
        self.descendant_leaves(&self.root)
    }

    /// Copy of the tree restricted to the given leaves. Routers left without
    /// leaves are dropped; everything else (including unary routers) is kept.
    pub fn restrict_to(&self, keep: &BTreeSet<NodeId>) -> Result<RoutingTree> {
        for id in keep {
            if !self.leaves.contains(id) {
                return Err(Error::input(format!("{id} is not a leaf")));
            }
        }
        let mut out = RoutingTree::new(self.root.clone());
        out.next_synthetic = self.next_synthetic;
        self.copy_restricted(&self.root, keep, &mut out);
        Ok(out)
    }

    fn copy_restricted(&self, node: &NodeId, keep: &BTreeSet<NodeId>, out: &mut RoutingTree) -> bool {
        // returns whether `node` has any kept leaf below it
        let mut any = false;
        for c in self.children(node) {
            if self.leaves.contains(c) {
                if keep.contains(c) {
                    out.add_leaf(node, c.clone()).unwrap();
                    any = true;
                }
            } else {
                out.add_router(node, c.clone(), self.router_cov[c]).unwrap();
                if self.copy_restricted(c, keep, out) {
                    any = true;
                } else {
                    out.remove_empty_router(c).unwrap();
                }
            }
        }
        any
    }

    /// Checks structural invariants: single connected acyclic tree, leaves
    /// childless, labels present and non-decreasing away from the root.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root.clone()];
        while let Some(n) = stack.pop() {
            if !seen.insert(n.clone()) {
                return Err(Error::Internal(format!("node {n} reached twice")));
            }
            if n != self.root {
                let p = self
                    .parent
                    .get(&n)
                    .ok_or_else(|| Error::Internal(format!("{n} has no parent")))?;
                if !self.children(p).contains(&n) {
                    return Err(Error::Internal(format!("{p} does not list child {n}")));
                }
            }
            if self.leaves.contains(&n) {
                if self.children.contains_key(&n) {
                    return Err(Error::Internal(format!("leaf {n} has children")));
                }
                continue;
            }
            let cov = self
                .router_cov
                .get(&n)
                .ok_or_else(|| Error::Internal(format!("router {n} has no label")))?;
            if let Some(p) = self.parent.get(&n) {
                let pc = self.router_cov[p];
                if *cov < pc {
                    return Err(Error::Internal(format!(
                        "label of {n} ({cov}) below its parent {p} ({pc})"
                    )));
                }
            }
            stack.extend(self.children(&n).iter().cloned());
        }
        if seen.len() != self.len() {
            return Err(Error::Internal("tree is not connected".into()));
        }
        Ok(())
    }
}

pub struct Ancestors<'a> {
    tree: &'a RoutingTree,
    next: Option<&'a NodeId>,
}

impl<'a> Iterator for Ancestors<'a> {
    type Item = &'a NodeId;

    fn next(&mut self) -> Option<Self::Item> {
        let cur = self.next?;
        self.next = self.tree.parent.get(cur);
        Some(cur)
    }
}

/// Number of links from the root to the lowest common ancestor of two
/// distinct leaves.
pub fn shared_path_length(tree: &RoutingTree, i: &NodeId, j: &NodeId) -> Result<usize> {
    for id in [i, j] {
        if !tree.is_leaf(id) {
            return Err(Error::input(format!("{id} is not a leaf of the tree")));
        }
    }
    if i == j {
        return Err(Error::input(format!("shared path of {i} with itself")));
    }
    tree.depth(&tree.lca(i, j)?)
}

/// Whether two trees over the same leaves have the same branching skeleton,
/// i.e. are identical up to router relabelling once every non-root router
/// with a single child has been suppressed.
pub fn trees_topologically_equal(t1: &RoutingTree, t2: &RoutingTree) -> Result<bool> {
    if t1.leaves() != t2.leaves() {
        return Err(Error::input("trees have different leaf sets"));
    }
    if t1.root() != t2.root() {
        return Err(Error::input(format!(
            "trees have different roots ({} vs {})",
            t1.root(),
            t2.root()
        )));
    }
    Ok(skeleton_signature(t1) == skeleton_signature(t2))
}

/// Canonical string form of the branching skeleton.
pub fn skeleton_signature(tree: &RoutingTree) -> String {
    fn canon(tree: &RoutingTree, node: &NodeId) -> String {
        if tree.is_leaf(node) {
            return format!("{:?}", node.as_str());
        }
        let kids = tree.children(node);
        if node != tree.root() && kids.len() == 1 {
            return canon(tree, &kids[0]);
        }
        let mut parts: Vec<String> = kids.iter().map(|c| canon(tree, c)).collect();
        parts.sort();
        format!("({})", parts.join(","))
    }
    canon(tree, tree.root())
}

/// How the sender spaced its packet pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IntervalMode {
    /// Constant interval δ between consecutive pairs.
    Fixed { delta_us: i64 },
    /// Arbitrary intervals; sender timestamps carried in the packets.
    Timestamped,
}

/// Sender timestamps and per-receiver arrivals for one measurement session.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    interval_mode: IntervalMode,
    sender_ts: Vec<i64>,
    arrivals: BTreeMap<NodeId, Vec<Option<i64>>>,
}

impl MeasurementLog {
    /// Builds a log, checking its invariants. `arrivals[r][k]` is `None` when
    /// the packet of pair `k` to `r` was lost.
    pub fn new(
        interval_mode: IntervalMode,
        sender_ts: Vec<i64>,
        arrivals: BTreeMap<NodeId, Vec<Option<i64>>>,
    ) -> Result<Self> {
        for w in sender_ts.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::input("sender timestamps are not strictly increasing"));
            }
        }
        if let IntervalMode::Fixed { delta_us } = interval_mode {
            if delta_us <= 0 {
                return Err(Error::input("pair interval must be positive"));
            }
            for (k, ts) in sender_ts.iter().enumerate() {
                if ts - sender_ts[0] != k as i64 * delta_us {
                    return Err(Error::input(format!(
                        "sender timestamp of pair {k} is off the fixed {delta_us} µs grid"
                    )));
                }
            }
        }
        for (r, series) in &arrivals {
            if r.is_synthetic() {
                return Err(Error::input(format!("receiver id {r} uses the reserved prefix")));
            }
            if series.len() != sender_ts.len() {
                return Err(Error::input(format!(
                    "receiver {r} has {} slots for {} pairs",
                    series.len(),
                    sender_ts.len()
                )));
            }
            for (k, a) in series.iter().enumerate() {
                if let Some(t) = a {
                    if *t < sender_ts[k] {
                        return Err(Error::input(format!(
                            "arrival of pair {k} at {r} precedes its send time"
                        )));
                    }
                }
            }
        }
        Ok(MeasurementLog {
            interval_mode,
            sender_ts,
            arrivals,
        })
    }

    pub fn interval_mode(&self) -> IntervalMode {
        self.interval_mode
    }

    pub fn n_pairs(&self) -> usize {
        self.sender_ts.len()
    }

    pub fn sender_ts(&self) -> &[i64] {
        &self.sender_ts
    }

    pub fn receivers(&self) -> impl Iterator<Item = &NodeId> {
        self.arrivals.keys()
    }

    pub fn has_receiver(&self, r: &NodeId) -> bool {
        self.arrivals.contains_key(r)
    }

    pub fn arrivals(&self, r: &NodeId) -> Option<&[Option<i64>]> {
        self.arrivals.get(r).map(Vec::as_slice)
    }

    pub fn arrival(&self, r: &NodeId, k: usize) -> Option<i64> {
        self.arrivals.get(r).and_then(|s| s.get(k).copied().flatten())
    }

    /// Number of recorded arrivals for a receiver.
    pub fn arrival_count(&self, r: &NodeId) -> usize {
        self.arrivals
            .get(r)
            .map(|s| s.iter().filter(|a| a.is_some()).count())
            .unwrap_or(0)
    }
}

/// Normalized delay offsets δ'(k) of one receiver over an aligned index set.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySeries {
    pub receiver: NodeId,
    /// Pair indices the values correspond to.
    pub indices: Vec<usize>,
    /// δ'(k) in µs.
    pub values: Vec<f64>,
}

/// Symmetric matrix of pairwise path-delay covariances in ms².
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    receivers: Vec<NodeId>,
    values: Vec<f64>,
    index: HashMap<NodeId, usize>,
}

impl CovarianceMatrix {
    /// Builds a matrix from a row-major square array; symmetry is checked exactly.
    pub fn new(receivers: Vec<NodeId>, values: Vec<f64>) -> Result<Self> {
        let n = receivers.len();
        if values.len() != n * n {
            return Err(Error::input(format!(
                "{} values for a {n}x{n} matrix",
                values.len()
            )));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, r) in receivers.iter().enumerate() {
            if index.insert(r.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate receiver {r}")));
            }
        }
        for i in 0..n {
            if values[i * n + i] < 0.0 || !values[i * n + i].is_finite() {
                return Err(Error::input(format!("negative variance for {}", receivers[i])));
            }
            for j in 0..i {
                if values[i * n + j] != values[j * n + i] {
                    return Err(Error::input(format!(
                        "matrix not symmetric at ({}, {})",
                        receivers[i], receivers[j]
                    )));
                }
            }
        }
        Ok(CovarianceMatrix {
            receivers,
            values,
            index,
        })
    }

    /// Builds a matrix from a function over unordered pairs (called with i ≤ j).
    pub fn from_fn(
        receivers: Vec<NodeId>,
        mut f: impl FnMut(&NodeId, &NodeId) -> Result<f64>,
    ) -> Result<Self> {
        let n = receivers.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = f(&receivers[i], &receivers[j])?;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self::new(receivers, values)
    }

    pub fn receivers(&self) -> &[NodeId] {
        &self.receivers
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.receivers.len() + j]
    }

    pub fn get(&self, a: &NodeId, b: &NodeId) -> Option<f64> {
        Some(self.at(self.index_of(a)?, self.index_of(b)?))
    }

    /// Rows as nested vectors.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks(self.receivers.len().max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Off-diagonal values of the upper triangle.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.receivers.len();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| self.at(i, j)))
    }

    /// Same matrix with every entry multiplied by `gamma`.
    pub fn scaled(&self, gamma: f64) -> CovarianceMatrix {
        CovarianceMatrix {
            receivers: self.receivers.clone(),
            values: self.values.iter().map(|v| v * gamma).collect(),
            index: self.index.clone(),
        }
    }
}

/// Anything that can answer pairwise covariance queries between leaves.
pub trait CovarianceSource {
    fn covariance(&self, a: &NodeId, b: &NodeId) -> Result<f64>;
}

impl CovarianceSource for CovarianceMatrix {
    fn covariance(&self, a: &NodeId, b: &NodeId) -> Result<f64> {
        self.get(a, b)
            .ok_or_else(|| Error::input(format!("pair ({a}, {b}) not in covariance matrix")))
    }
}

impl<T: CovarianceSource + ?Sized> CovarianceSource for &T {
    fn covariance(&self, a: &NodeId, b: &NodeId) -> Result<f64> {
        (**self).covariance(a, b)
    }
}
