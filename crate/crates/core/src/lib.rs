//! Passive inference of a multicast-free routing tree from end-to-end delay
//! covariance of back-to-back packet pairs.
//!
//! The pipeline is: [`dce`] turns a [`MeasurementLog`] into a
//! [`CovarianceMatrix`], [`ordering`] arranges the receivers in depth-first
//! order, [`recover`] builds the [`RoutingTree`], and [`dynamic`] keeps it
//! up to date as peers join and leave. [`simulator`] produces synthetic
//! networks with known ground truth and [`accuracy`] scores recovered trees.

pub mod accuracy;
pub mod cli;
pub mod dce;
pub mod dynamic;
pub mod error;
pub mod model;
pub mod ordering;
pub mod recover;
pub mod simulator;

pub use accuracy::{accuracy_report, classify_triple, tomography_accuracy, AccuracyReport};
pub use dce::{build_covariance_matrix, estimate_covariance, pair_covariance, LogCovariance};
pub use dynamic::{attach_peer, remove_peer, JoinOutcome};
pub use error::{Error, Result};
pub use model::{
    shared_path_length, trees_topologically_equal, CovarianceMatrix, CovarianceSource,
    DelaySeries, IntervalMode, MeasurementLog, NodeId, RoutingTree,
};
pub use ordering::{dfs_order, is_valid_dfs_order};
pub use recover::{recover_tree, RecoveryConfig};
pub use simulator::{generate_topology, simulate_session, SimulatedNetwork, SimulatorConfig};
