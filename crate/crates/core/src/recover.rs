//! Static tree recovery from a DFS-ordered leaf list.
//!
//! Leaves are inserted left to right. The covariance of each new leaf with its
//! predecessor, compared to the predecessor's covariance with the leaf before
//! it, decides whether the new leaf branches at the same router, deeper, or
//! higher up the tree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovarianceMatrix, CovarianceSource, NodeId, RoutingTree};

/// Lower bound for the automatically chosen threshold.
pub const DEFAULT_MIN_RHO: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    /// ϱ in ms²: the smallest covariance increment a single router can add.
    pub rho: f64,
}

impl RecoveryConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::config("rho", format!("must be positive and finite, got {rho}")));
        }
        Ok(RecoveryConfig { rho })
    }

    /// Half the smallest positive gap between distinct off-diagonal
    /// covariances, floored at `min_rho`.
    pub fn from_matrix(cov: &CovarianceMatrix, min_rho: f64) -> Result<Self> {
        let mut vals: Vec<f64> = cov.off_diagonal().collect();
        vals.sort_by(f64::total_cmp);
        let gap = vals
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min);
        let rho = if gap.is_finite() { (gap / 2.0).max(min_rho) } else { min_rho };
        Self::new(rho)
    }
}

/// Relation between the current and previous shared-path covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    /// Both shared paths end at the same router.
    SameSet,
    /// The new leaf branches below the previous branch point.
    Deeper,
    /// The new leaf branches above the previous branch point.
    Shallower,
}

/// Exact ϱ-boundaries go to `Deeper`, then `Shallower`.
pub fn classify_case(sigma_cur: f64, sigma_prev: f64, rho: f64) -> Case {
    let d = sigma_cur - sigma_prev;
    if d >= rho {
        Case::Deeper
    } else if d <= -rho {
        Case::Shallower
    } else {
        Case::SameSet
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub router: NodeId,
    /// The router's label matches the target within ϱ; otherwise a hidden
    /// router belongs between it and its parent.
    pub exact: bool,
}

/// Walks up from `from_leaf` and returns the topmost ancestor r* whose label
/// still satisfies σ²(r*) ≥ `sigma_target`. If even the leaf's parent falls
/// short, the parent is returned as an exact match.
pub fn find_attachment_router(
    tree: &RoutingTree,
    from_leaf: &NodeId,
    sigma_target: f64,
    rho: f64,
) -> Result<Attachment> {
    if !tree.is_leaf(from_leaf) {
        return Err(Error::input(format!("{from_leaf} is not a leaf")));
    }
    let mut ancestors = tree.ancestors(from_leaf);
    let parent = ancestors
        .next()
        .ok_or_else(|| Error::Internal(format!("leaf {from_leaf} has no parent")))?;
    let label = |n: &NodeId| tree.router_cov(n).unwrap_or(0.0);
    if label(parent) < sigma_target {
        return Ok(Attachment {
            router: parent.clone(),
            exact: true,
        });
    }
    let mut best = parent;
    for a in ancestors {
        if label(a) >= sigma_target {
            best = a;
        } else {
            break;
        }
    }
    // nothing sits above the root, so a root match is always taken as is
    if best == tree.root() || (label(best) - sigma_target).abs() < rho {
        return Ok(Attachment {
            router: best.clone(),
            exact: true,
        });
    }
    // a hidden router within ϱ of the parent could not be told apart from it
    let above = tree.parent(best).expect("non-root router has a parent");
    Ok(if sigma_target - label(above) < rho {
        Attachment {
            router: above.clone(),
            exact: true,
        }
    } else {
        Attachment {
            router: best.clone(),
            exact: false,
        }
    })
}

/// Attach `leaf` at `att`, inserting a hidden router labelled `sigma` above
/// `att.router` when the match is not exact.
pub(crate) fn attach_at(
    tree: &mut RoutingTree,
    att: &Attachment,
    leaf: NodeId,
    sigma: f64,
) -> Result<()> {
    if att.exact {
        tree.add_leaf(&att.router, leaf)
    } else {
        let hidden = tree.fresh_router_id();
        let above = tree
            .parent(&att.router)
            .and_then(|p| tree.router_cov(p))
            .unwrap_or(0.0);
        tree.insert_router_above(&att.router, hidden.clone(), sigma.max(above))?;
        tree.add_leaf(&hidden, leaf)
    }
}

/// Builds the routing tree rooted at `source` over `ordered_leaves`, which
/// must be in (estimated) DFS order.
pub fn recover_tree(
    source: &NodeId,
    ordered_leaves: &[NodeId],
    cov: &impl CovarianceSource,
    config: RecoveryConfig,
) -> Result<RoutingTree> {
    let rho = config.rho;
    let mut tree = RoutingTree::new(source.clone());
    for (i, x) in ordered_leaves.iter().enumerate() {
        if x == source || x.is_synthetic() || ordered_leaves[..i].contains(x) {
            return Err(Error::input(format!("invalid or duplicate leaf {x}")));
        }
    }
    let (first, rest) = ordered_leaves
        .split_first()
        .ok_or_else(|| Error::input("no leaves to recover"))?;
    let root = tree.root().clone();
    let Some(second) = rest.first() else {
        tree.add_leaf(&root, first.clone())?;
        return Ok(tree);
    };

    // bootstrap: the first pair is compared against the root's zero label
    let mut prev = cov.covariance(second, first)?;
    if classify_case(prev, 0.0, rho) == Case::Deeper {
        let r = tree.fresh_router_id();
        tree.add_router(&root, r.clone(), prev)?;
        tree.add_leaf(&r, first.clone())?;
        tree.add_leaf(&r, second.clone())?;
    } else {
        tree.add_leaf(&root, first.clone())?;
        tree.add_leaf(&root, second.clone())?;
    }

    for w in ordered_leaves.windows(2).skip(1) {
        let (last, x) = (&w[0], &w[1]);
        let cur = cov.covariance(x, last)?;
        let parent = tree
            .parent(last)
            .cloned()
            .ok_or_else(|| Error::Internal(format!("{last} detached during recovery")))?;
        match classify_case(cur, prev, rho) {
            Case::SameSet => tree.add_leaf(&parent, x.clone())?,
            Case::Deeper => {
                let r = tree.fresh_router_id();
                let floor = tree.router_cov(&parent).unwrap_or(0.0);
                tree.insert_router_above(last, r.clone(), cur.max(floor))?;
                tree.add_leaf(&r, x.clone())?;
            }
            Case::Shallower => {
                let att = find_attachment_router(&tree, last, cur, rho)?;
                attach_at(&mut tree, &att, x.clone(), cur)?;
            }
        }
        prev = cur;
    }
    Ok(tree)
}
