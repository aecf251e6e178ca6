//! Depth-first leaf ordering from pairwise covariances alone.
//!
//! Recursive bisection: the pair with the smallest covariance straddles the
//! top split of the current leaf set. Every other leaf joins the side of the
//! pivot it shares more covariance with, and each side is ordered the same
//! way. On noiseless shared-path covariances the concatenation is a valid DFS
//! leaf order of the underlying tree.

use crate::model::{CovarianceMatrix, NodeId};

/// Receivers of `cov` arranged in an estimated DFS leaf order.
pub fn dfs_order(cov: &CovarianceMatrix) -> Vec<NodeId> {
    let mut idx: Vec<usize> = (0..cov.len()).collect();
    idx.sort_by(|&a, &b| cov.receivers()[a].cmp(&cov.receivers()[b]));
    bisect(cov, idx)
        .into_iter()
        .map(|i| cov.receivers()[i].clone())
        .collect()
}

// `ids` is kept in canonical (lexicographic id) order on entry.
fn bisect(cov: &CovarianceMatrix, ids: Vec<usize>) -> Vec<usize> {
    if ids.len() <= 2 {
        return ids;
    }
    let mut pivot = (ids[0], ids[1]);
    let mut best = f64::INFINITY;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let c = cov.at(i, j);
            if c < best {
                best = c;
                pivot = (i, j);
            }
        }
    }
    let (p, q) = pivot;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &x in &ids {
        if x == p || (x != q && cov.at(x, p) >= cov.at(x, q)) {
            left.push(x);
        } else {
            right.push(x);
        }
    }
    let mut out = bisect(cov, left);
    out.extend(bisect(cov, right));
    out
}

/// Consecutive-minimum check: for every i < j < k in `order`,
/// σ²(x_i, x_k) ≤ min(σ²(x_i, x_j), σ²(x_j, x_k)) + tol.
pub fn is_valid_dfs_order(order: &[NodeId], cov: &CovarianceMatrix, tol: f64) -> bool {
    let idx: Option<Vec<usize>> = order.iter().map(|r| cov.index_of(r)).collect();
    let Some(idx) = idx else {
        return false;
    };
    let n = idx.len();
    for i in 0..n {
        for k in i + 2..n {
            let outer = cov.at(idx[i], idx[k]);
            for &j in &idx[i + 1..k] {
                if outer > cov.at(idx[i], j).min(cov.at(j, idx[k])) + tol {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NodeId {
        NodeId::from(s)
    }

    // caterpillar ((a,b),c): σ(a,b) = 3, σ(a,c) = σ(b,c) = 1
    fn caterpillar() -> CovarianceMatrix {
        CovarianceMatrix::new(
            vec![id("a"), id("b"), id("c")],
            vec![5.0, 3.0, 1.0, 3.0, 5.0, 1.0, 1.0, 1.0, 5.0],
        )
        .unwrap()
    }

    #[test]
    fn single_and_pair() {
        let one = CovarianceMatrix::new(vec![id("x")], vec![1.0]).unwrap();
        assert_eq!(dfs_order(&one), vec![id("x")]);
        let two = CovarianceMatrix::new(vec![id("y"), id("x")], vec![1.0, 0.2, 0.2, 1.0]).unwrap();
        let order = dfs_order(&two);
        assert_eq!(order.len(), 2);
        assert!(is_valid_dfs_order(&order, &two, 0.0));
        assert!(is_valid_dfs_order(&[id("x"), id("y")], &two, 0.0));
        assert!(is_valid_dfs_order(&[id("y"), id("x")], &two, 0.0));
    }

    #[test]
    fn caterpillar_permutations() {
        let cov = caterpillar();
        let perms = [
            ["a", "b", "c"],
            ["a", "c", "b"],
            ["b", "a", "c"],
            ["b", "c", "a"],
            ["c", "a", "b"],
            ["c", "b", "a"],
        ];
        for p in perms {
            let order: Vec<NodeId> = p.iter().map(|s| id(s)).collect();
            let adjacent = order.iter().position(|x| *x == id("c")) != Some(1);
            assert_eq!(is_valid_dfs_order(&order, &cov, 0.0), adjacent, "{p:?}");
        }
        let order = dfs_order(&cov);
        assert_ne!(order[1], id("c"));
    }

    #[test]
    fn tolerance_absorbs_small_violations() {
        let cov = caterpillar();
        let bad = [id("a"), id("c"), id("b")];
        assert!(!is_valid_dfs_order(&bad, &cov, 0.0));
        assert!(is_valid_dfs_order(&bad, &cov, 2.0));
    }

    #[test]
    fn unknown_receiver_is_invalid() {
        assert!(!is_valid_dfs_order(&[id("a"), id("zz")], &caterpillar(), 0.0));
    }
}
