//! File formats.
//!
//! Measurement logs are newline-delimited JSON, one record per line:
//!
//! ```text
//! {"type":"send","k":0,"ts_us":1000000}
//! {"type":"recv","receiver":"h3","k":0,"ts_us":1012345}
//! ```
//!
//! Every pair index `0..n` needs exactly one `send` record. A missing `recv`
//! record means the packet was lost. Trees are nested JSON objects
//! `{"id", "cov"?, "children"?}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovarianceMatrix, IntervalMode, MeasurementLog, NodeId, RoutingTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogRecord {
    Send { k: u64, ts_us: i64 },
    Recv { receiver: String, k: u64, ts_us: i64 },
}

/// Parses an NDJSON measurement log. Errors carry 1-based line numbers.
pub fn parse_log(reader: impl BufRead) -> Result<MeasurementLog> {
    let mut sends: BTreeMap<u64, (i64, usize)> = BTreeMap::new();
    let mut recvs: BTreeMap<(String, u64), (i64, usize)> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::Log {
            line: line_no,
            msg: format!("malformed record: {e}"),
        })?;
        match rec {
            LogRecord::Send { k, ts_us } => {
                if sends.insert(k, (ts_us, line_no)).is_some() {
                    return Err(Error::Log {
                        line: line_no,
                        msg: format!("duplicate send record for pair {k}"),
                    });
                }
            }
            LogRecord::Recv { receiver, k, ts_us } => {
                if receiver.is_empty() || NodeId::new(receiver.clone()).is_synthetic() {
                    return Err(Error::Log {
                        line: line_no,
                        msg: format!("invalid receiver id {receiver:?}"),
                    });
                }
                if recvs.insert((receiver.clone(), k), (ts_us, line_no)).is_some() {
                    return Err(Error::Log {
                        line: line_no,
                        msg: format!("duplicate record for ({receiver}, {k})"),
                    });
                }
            }
        }
    }
    let n = sends.len();
    let mut sender_ts = Vec::with_capacity(n);
    for (expect, (&k, &(ts, line))) in sends.iter().enumerate() {
        if k != expect as u64 {
            return Err(Error::Log {
                line,
                msg: format!("send records skip pair {expect}"),
            });
        }
        if let Some(&prev) = sender_ts.last() {
            if ts <= prev {
                return Err(Error::Log {
                    line,
                    msg: format!("sender timestamp of pair {k} is not increasing"),
                });
            }
        }
        sender_ts.push(ts);
    }
    let mut arrivals: BTreeMap<NodeId, Vec<Option<i64>>> = BTreeMap::new();
    for ((receiver, k), (ts, line)) in recvs {
        let Some(&sent) = sender_ts.get(k as usize) else {
            return Err(Error::Log {
                line,
                msg: format!("receive for pair {k} without a send record"),
            });
        };
        if ts < sent {
            return Err(Error::Log {
                line,
                msg: format!("arrival {ts} precedes send time {sent} of pair {k}"),
            });
        }
        arrivals
            .entry(NodeId::new(receiver))
            .or_insert_with(|| vec![None; n])[k as usize] = Some(ts);
    }
    MeasurementLog::new(infer_interval_mode(&sender_ts), sender_ts, arrivals)
}

fn infer_interval_mode(ts: &[i64]) -> IntervalMode {
    if ts.len() < 2 {
        return IntervalMode::Timestamped;
    }
    let delta = ts[1] - ts[0];
    let regular = ts
        .iter()
        .enumerate()
        .all(|(k, t)| t - ts[0] == k as i64 * delta);
    if regular {
        IntervalMode::Fixed { delta_us: delta }
    } else {
        IntervalMode::Timestamped
    }
}

pub fn import_log(path: &Path) -> Result<MeasurementLog> {
    parse_log(BufReader::new(File::open(path)?))
}

/// Writes a log as NDJSON: for each pair, its send record followed by the
/// arrivals in receiver order.
pub fn write_log(log: &MeasurementLog, mut out: impl Write) -> Result<()> {
    let receivers: Vec<&NodeId> = log.receivers().collect();
    for (k, ts) in log.sender_ts().iter().enumerate() {
        let rec = LogRecord::Send {
            k: k as u64,
            ts_us: *ts,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        for r in &receivers {
            if let Some(t) = log.arrival(r, k) {
                let rec = LogRecord::Recv {
                    receiver: r.to_string(),
                    k: k as u64,
                    ts_us: t,
                };
                writeln!(out, "{}", serde_json::to_string(&rec)?)?;
            }
        }
    }
    Ok(())
}

pub fn export_log(log: &MeasurementLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_log(log, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Nested tree document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeNode {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn from_tree(tree: &RoutingTree) -> TreeNode {
        fn build(tree: &RoutingTree, id: &NodeId) -> TreeNode {
            TreeNode {
                id: id.clone(),
                cov: if tree.is_leaf(id) { None } else { tree.router_cov(id) },
                children: tree.children(id).iter().map(|c| build(tree, c)).collect(),
            }
        }
        build(tree, tree.root())
    }

    /// Nodes without children are leaves, except the root.
    pub fn to_tree(&self) -> Result<RoutingTree> {
        let mut tree = RoutingTree::new(self.id.clone());
        let mut stack: Vec<(&NodeId, &TreeNode)> =
            self.children.iter().rev().map(|c| (&self.id, c)).collect();
        while let Some((parent, node)) = stack.pop() {
            if node.children.is_empty() && node.cov.is_none() {
                tree.add_leaf(parent, node.id.clone())?;
            } else {
                tree.add_router(parent, node.id.clone(), node.cov.unwrap_or(0.0))?;
                stack.extend(node.children.iter().rev().map(|c| (&node.id, c)));
            }
        }
        tree.validate()
            .map_err(|e| Error::input(format!("tree document: {e}")))?;
        Ok(tree)
    }
}

pub fn tree_to_json(tree: &RoutingTree) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TreeNode::from_tree(tree))?)
}

pub fn tree_from_json(s: &str) -> Result<RoutingTree> {
    let node: TreeNode =
        serde_json::from_str(s).map_err(|e| Error::input(format!("tree document: {e}")))?;
    node.to_tree()
}

pub fn read_tree(path: &Path) -> Result<RoutingTree> {
    tree_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub receivers: Vec<NodeId>,
    /// Row-major, ms².
    pub values: Vec<Vec<f64>>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &CovarianceMatrix) -> Self {
        MatrixDoc {
            receivers: m.receivers().to_vec(),
            values: m.rows(),
        }
    }

    pub fn to_matrix(&self) -> Result<CovarianceMatrix> {
        let n = self.receivers.len();
        if self.values.len() != n || self.values.iter().any(|r| r.len() != n) {
            return Err(Error::input("covariance document is not square"));
        }
        CovarianceMatrix::new(self.receivers.clone(), self.values.concat())
    }
}

pub fn read_matrix(path: &Path) -> Result<CovarianceMatrix> {
    let doc: MatrixDoc = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::input(format!("covariance document: {e}")))?;
    doc.to_matrix()
}
