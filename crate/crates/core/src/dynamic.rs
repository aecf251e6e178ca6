//! Incremental maintenance of an inferred tree as peers join and leave.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{CovarianceSource, NodeId, RoutingTree};
use crate::recover::{attach_at, classify_case, find_attachment_router, Case, RecoveryConfig};

/// State of one step of a join walk at base router `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinContext {
    pub base_router: NodeId,
    pub children: Vec<NodeId>,
    pub representatives: BTreeMap<NodeId, NodeId>,
    pub joining: NodeId,
    pub best_child: NodeId,
    pub best_rep: NodeId,
    /// σ²(k, best_rep)
    pub best_cov: f64,
    /// Covariance of the path shared up to the base router.
    pub reference_cov: f64,
}

/// Where a join ended.
#[derive(Debug, Clone, PartialEq)]
pub enum JoinOutcome {
    /// Attached directly to the base router.
    AtBase(NodeId),
    /// A new router was created above a leaf child of the base router.
    NewBranch { router: NodeId, sibling: NodeId },
    /// Attached to an existing router above the base router.
    AtAncestor(NodeId),
    /// A hidden router was inserted above `below`.
    Hidden { router: NodeId, below: NodeId },
}

/// For each child of `m`, its lexicographically smallest descendant leaf.
pub fn select_representatives(tree: &RoutingTree, m: &NodeId) -> Result<BTreeMap<NodeId, NodeId>> {
    if !tree.contains(m) || tree.is_leaf(m) {
        return Err(Error::input(format!("{m} is not an internal node")));
    }
    let mut reps = BTreeMap::new();
    for c in tree.children(m) {
        let leaf = tree
            .descendant_leaves(c)
            .into_iter()
            .min()
            .ok_or_else(|| Error::Internal(format!("router {c} has no leaves below it")))?;
        reps.insert(c.clone(), leaf);
    }
    Ok(reps)
}

fn join_context(
    tree: &RoutingTree,
    cov: &impl CovarianceSource,
    m: &NodeId,
    k: &NodeId,
) -> Result<JoinContext> {
    let reps = select_representatives(tree, m)?;
    let children = tree.children(m).to_vec();
    let mut best: Option<(f64, &NodeId, &NodeId)> = None;
    for (c, d) in &reps {
        let s = cov.covariance(k, d)?;
        let better = match best {
            None => true,
            Some((bs, _, bd)) => s > bs || (s == bs && d < bd),
        };
        if better {
            best = Some((s, c, d));
        }
    }
    let (best_cov, best_child, best_rep) =
        best.ok_or_else(|| Error::Internal(format!("base router {m} has no children")))?;
    let reference_cov = if children.len() >= 2 {
        // representatives of the two smallest-id children
        let mut ids: Vec<&NodeId> = reps.keys().collect();
        ids.sort();
        cov.covariance(&reps[ids[0]], &reps[ids[1]])?
    } else {
        tree.router_cov(m).unwrap_or(0.0)
    };
    Ok(JoinContext {
        base_router: m.clone(),
        children,
        representatives: reps.clone(),
        joining: k.clone(),
        best_child: best_child.clone(),
        best_rep: best_rep.clone(),
        best_cov,
        reference_cov,
    })
}

/// Places a new leaf `k` into `tree` by walking down from the root.
pub fn attach_peer(
    tree: &mut RoutingTree,
    cov: &impl CovarianceSource,
    k: &NodeId,
    config: RecoveryConfig,
) -> Result<JoinOutcome> {
    if tree.contains(k) {
        return Err(Error::input(format!("{k} is already in the tree")));
    }
    if k.is_synthetic() {
        return Err(Error::input(format!("peer id {k} uses the reserved prefix")));
    }
    let rho = config.rho;
    let mut m = tree.root().clone();
    if tree.children(&m).is_empty() {
        tree.add_leaf(&m, k.clone())?;
        return Ok(JoinOutcome::AtBase(m));
    }
    // each iteration moves one level down, so the walk ends within the tree height
    loop {
        // no branching at m: nothing to compare against, Case 7 climbs back if needed
        if let [only] = tree.children(&m) {
            if !tree.is_leaf(only) {
                m = only.clone();
                continue;
            }
        }
        let ctx = join_context(tree, cov, &m, k)?;
        match classify_case(ctx.best_cov, ctx.reference_cov, rho) {
            Case::SameSet => {
                tree.add_leaf(&m, k.clone())?;
                return Ok(JoinOutcome::AtBase(m));
            }
            Case::Deeper => {
                if !tree.is_leaf(&ctx.best_child) {
                    m = ctx.best_child;
                    continue;
                }
                let r = tree.fresh_router_id();
                let floor = tree.router_cov(&m).unwrap_or(0.0);
                tree.insert_router_above(&ctx.best_child, r.clone(), ctx.best_cov.max(floor))?;
                tree.add_leaf(&r, k.clone())?;
                return Ok(JoinOutcome::NewBranch {
                    router: r,
                    sibling: ctx.best_child,
                });
            }
            Case::Shallower => {
                let att = find_attachment_router(tree, &ctx.best_rep, ctx.best_cov, rho)?;
                attach_at(tree, &att, k.clone(), ctx.best_cov)?;
                return Ok(if att.exact {
                    JoinOutcome::AtAncestor(att.router)
                } else {
                    JoinOutcome::Hidden {
                        router: tree.parent(k).unwrap().clone(),
                        below: att.router,
                    }
                });
            }
        }
    }
}

/// Removes leaf `k`. A non-root router left with fewer than two children is
/// spliced out so the tree stays a branching skeleton.
pub fn remove_peer(tree: &mut RoutingTree, k: &NodeId) -> Result<()> {
    let mut node = tree.remove_leaf(k)?;
    loop {
        if node == *tree.root() {
            return Ok(());
        }
        match tree.children(&node).len() {
            0 => node = tree.remove_empty_router(&node)?,
            1 => return tree.splice_router(&node),
            _ => return Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{trees_topologically_equal, CovarianceMatrix};
    use crate::recover::recover_tree;

    fn id(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn cfg() -> RecoveryConfig {
        RecoveryConfig::new(0.5).unwrap()
    }

    fn matrix(ids: &[&str], f: impl Fn(&str, &str) -> f64) -> CovarianceMatrix {
        let r: Vec<NodeId> = ids.iter().map(|s| id(s)).collect();
        CovarianceMatrix::from_fn(r, |a, b| {
            Ok(if a == b { 50.0 } else { f(a.as_str(), b.as_str()) })
        })
        .unwrap()
    }

    // s -> r1(2) -> {a, b}
    fn small() -> RoutingTree {
        let mut t = RoutingTree::new(id("s"));
        t.add_router(&id("s"), id("r1"), 2.0).unwrap();
        t.add_leaf(&id("r1"), id("a")).unwrap();
        t.add_leaf(&id("r1"), id("b")).unwrap();
        t
    }

    #[test]
    fn representatives_leaf_child_is_itself() {
        let t = small();
        let reps = select_representatives(&t, &id("r1")).unwrap();
        assert_eq!(reps[&id("a")], id("a"));
        assert_eq!(reps[&id("b")], id("b"));
        assert!(select_representatives(&t, &id("a")).is_err());
    }

    #[test]
    fn representatives_pick_smallest_id() {
        let mut t = RoutingTree::new(id("s"));
        t.add_router(&id("s"), id("m"), 1.0).unwrap();
        t.add_router(&id("m"), id("x"), 2.0).unwrap();
        t.add_leaf(&id("x"), id("h7")).unwrap();
        t.add_leaf(&id("x"), id("h3")).unwrap();
        assert_eq!(select_representatives(&t, &id("m")).unwrap()[&id("x")], id("h3"));
    }

    #[test]
    fn representatives_on_eight_leaf_tree() {
        // m has three children: a cherry, a leaf, and a 5-leaf subtree
        let mut t = RoutingTree::new(id("s"));
        t.add_router(&id("s"), id("m"), 1.0).unwrap();
        t.add_router(&id("m"), id("u"), 2.0).unwrap();
        t.add_leaf(&id("u"), id("h5")).unwrap();
        t.add_leaf(&id("u"), id("h1")).unwrap();
        t.add_leaf(&id("m"), id("h4")).unwrap();
        t.add_router(&id("m"), id("v"), 3.0).unwrap();
        t.add_router(&id("v"), id("w"), 4.0).unwrap();
        for h in ["h8", "h6"] {
            t.add_leaf(&id("w"), id(h)).unwrap();
        }
        for h in ["h2", "h7", "h9"] {
            t.add_leaf(&id("v"), id(h)).unwrap();
        }
        let reps = select_representatives(&t, &id("m")).unwrap();
        // traversal oracle
        for c in t.children(&id("m")) {
            let mut below = t.descendant_leaves(c);
            below.sort();
            assert_eq!(reps[c], below[0]);
        }
        assert_eq!(reps.len(), 3);
        let mut distinct: Vec<_> = reps.values().collect();
        distinct.dedup();
        assert_eq!(distinct.len(), 3);
        assert_eq!(reps[&id("v")], id("h2"));
    }

    #[test]
    fn join_same_router_case() {
        let m = matrix(&["a", "b", "k"], |_, _| 2.0);
        let mut t = small();
        let out = attach_peer(&mut t, &m, &id("k"), cfg()).unwrap();
        assert_eq!(out, JoinOutcome::AtBase(id("r1")));
        assert_eq!(t.parent(&id("k")), Some(&id("r1")));
    }

    #[test]
    fn join_shares_nothing() {
        let m = matrix(&["a", "b", "k"], |x, y| if x == "k" || y == "k" { 0.0 } else { 2.0 });
        let mut t = small();
        attach_peer(&mut t, &m, &id("k"), cfg()).unwrap();
        assert_eq!(t.parent(&id("k")), Some(&id("s")));
        t.validate().unwrap();
    }

    #[test]
    fn join_deeper_under_leaf() {
        // k is a's sibling under a router at 2 + 3
        let m = matrix(&["a", "b", "k"], |x, y| match (x.min(y), x.max(y)) {
            ("a", "k") => 5.0,
            _ => 2.0,
        });
        let mut t = small();
        let out = attach_peer(&mut t, &m, &id("k"), cfg()).unwrap();
        let JoinOutcome::NewBranch { router, sibling } = out else {
            panic!("unexpected {out:?}");
        };
        assert_eq!(sibling, id("a"));
        assert_eq!(t.router_cov(&router), Some(5.0));
        assert_eq!(t.parent(&id("k")), Some(&router));
        assert_eq!(t.parent(&router), Some(&id("r1")));

        let statik = recover_tree(
            &id("s"),
            &[id("b"), id("a"), id("k")],
            &m,
            cfg(),
        )
        .unwrap();
        assert!(trees_topologically_equal(&t, &statik).unwrap());
    }

    #[test]
    fn join_hidden_router_above_base() {
        // s -> r1(1) -> r2(4) -> {a, b}; k shares 2 with both
        let mut t = RoutingTree::new(id("s"));
        t.add_router(&id("s"), id("r1"), 1.0).unwrap();
        t.add_router(&id("r1"), id("r2"), 4.0).unwrap();
        t.add_leaf(&id("r2"), id("a")).unwrap();
        t.add_leaf(&id("r2"), id("b")).unwrap();
        let m = matrix(&["a", "b", "k"], |x, y| if x == "k" || y == "k" { 2.0 } else { 4.0 });
        let out = attach_peer(&mut t, &m, &id("k"), cfg()).unwrap();
        let JoinOutcome::Hidden { router, below } = out else {
            panic!("unexpected {out:?}");
        };
        assert_eq!(below, id("r2"));
        assert_eq!(t.router_cov(&router), Some(2.0));
        assert_eq!(t.parent(&router), Some(&id("r1")));
        t.validate().unwrap();
    }

    #[test]
    fn join_descends_through_unary_router() {
        // s -> u(0.1) -> {a, b}: u is within ϱ of the root but still a router
        let mut t = RoutingTree::new(id("s"));
        t.add_router(&id("s"), id("u"), 0.1).unwrap();
        t.add_leaf(&id("u"), id("a")).unwrap();
        t.add_leaf(&id("u"), id("b")).unwrap();
        let m = matrix(&["a", "b", "k"], |_, _| 0.1);
        let out = attach_peer(&mut t, &m, &id("k"), cfg()).unwrap();
        assert_eq!(out, JoinOutcome::AtBase(id("u")));
    }

    #[test]
    fn rejoin_is_an_error() {
        let m = matrix(&["a", "b"], |_, _| 2.0);
        let mut t = small();
        assert!(matches!(
            attach_peer(&mut t, &m, &id("a"), cfg()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn missing_pair_is_reported() {
        let m = matrix(&["a", "b"], |_, _| 2.0);
        let mut t = small();
        assert!(attach_peer(&mut t, &m, &id("k"), cfg()).is_err());
        assert!(!t.contains(&id("k")));
    }

    #[test]
    fn remove_one_of_three() {
        let mut t = small();
        t.add_leaf(&id("r1"), id("c")).unwrap();
        remove_peer(&mut t, &id("c")).unwrap();
        assert_eq!(t, small());
    }

    #[test]
    fn remove_one_of_two_splices() {
        let mut t = small();
        remove_peer(&mut t, &id("b")).unwrap();
        assert!(!t.contains(&id("r1")));
        assert_eq!(t.parent(&id("a")), Some(&id("s")));
        t.validate().unwrap();
        assert!(remove_peer(&mut t, &id("s")).is_err());
        assert!(remove_peer(&mut t, &id("zz")).is_err());
    }
}
