//! File formats, scenario configuration and the runners behind the `tomo`
//! binary.

pub mod config;
pub mod io;
pub mod scenario;

pub use config::{DynamicSpec, RecoverySettings, ScenarioConfig, SweepSpec};
pub use io::{export_log, import_log, parse_log, read_matrix, read_tree, tree_from_json, tree_to_json, write_log, MatrixDoc, TreeNode};
pub use scenario::{run_dynamic_scenario, run_scenario, run_sweep};
