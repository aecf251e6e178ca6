//! Scenario configuration (JSON).
//!
//! ```json
//! {
//!   "seeds": [1, 2, 3],
//!   "network": { "n_hosts": 150, "n_routers": 50, "bg_rate": 5000000 },
//!   "recovery": { "rho": 0.3 },
//!   "sweep": { "bg_rate": [1e6, 6e6, 12e6] },
//!   "dynamic": { "initial_hosts": 150, "host_step": 100 }
//! }
//! ```
//!
//! `seeds` is required; everything else falls back to defaults, and reports
//! embed the fully resolved document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recover::{RecoveryConfig, DEFAULT_MIN_RHO};
use crate::simulator::SimulatorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub network: SimulatorConfig,
    #[serde(default)]
    pub recovery: RecoverySettings,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub dynamic: Option<DynamicSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverySettings {
    /// Fixed ϱ in ms²; when absent it is derived from each covariance matrix.
    pub rho: Option<f64>,
    /// Floor for the derived ϱ.
    pub min_rho: f64,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        RecoverySettings {
            rho: None,
            min_rho: DEFAULT_MIN_RHO,
        }
    }
}

impl RecoverySettings {
    pub fn resolve(&self, cov: Option<&crate::model::CovarianceMatrix>) -> Result<RecoveryConfig> {
        match (self.rho, cov) {
            (Some(rho), _) => RecoveryConfig::new(rho),
            (None, Some(m)) => RecoveryConfig::from_matrix(m, self.min_rho),
            (None, None) => RecoveryConfig::new(self.min_rho),
        }
    }
}

/// Grid of values to sweep; an empty list keeps the network's own value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub bg_rate: Vec<f64>,
    pub packet_size_bytes: Vec<f64>,
    pub pair_interval_us: Vec<i64>,
}

/// Growth schedule. `network.n_hosts` is the final size; hosts `h0` up to
/// `h<initial_hosts - 1>` are present from the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicSpec {
    pub initial_hosts: usize,
    /// Hosts added per step, in index order.
    #[serde(default)]
    pub host_step: Option<usize>,
    /// Explicit joins per step, as client ids. Overrides `host_step`.
    #[serde(default)]
    pub schedule: Option<Vec<Vec<String>>>,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(s).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".into());
            Error::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        self.network.validate().map_err(|e| match e {
            Error::Config { field, msg } => Error::config(format!("network.{field}"), msg),
            other => other,
        })?;
        if let Some(rho) = self.recovery.rho {
            RecoveryConfig::new(rho).map_err(|_| Error::config("recovery.rho", "must be positive"))?;
        }
        if !(self.recovery.min_rho > 0.0) {
            return Err(Error::config("recovery.min_rho", "must be positive"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.bg_rate.iter().any(|r| !(*r >= 0.0)) {
                return Err(Error::config("sweep.bg_rate", "rates must be non-negative"));
            }
            if sweep.packet_size_bytes.iter().any(|r| !(*r >= 0.0)) {
                return Err(Error::config("sweep.packet_size_bytes", "sizes must be non-negative"));
            }
            if sweep.pair_interval_us.iter().any(|r| *r <= 0) {
                return Err(Error::config("sweep.pair_interval_us", "intervals must be positive"));
            }
        }
        if let Some(d) = &self.dynamic {
            if d.initial_hosts < 2 || d.initial_hosts > self.network.n_hosts {
                return Err(Error::config(
                    "dynamic.initial_hosts",
                    "must be between 2 and network.n_hosts",
                ));
            }
            if d.host_step == Some(0) {
                return Err(Error::config("dynamic.host_step", "must be positive"));
            }
            if d.schedule.is_none() && d.host_step.is_none() && d.initial_hosts < self.network.n_hosts {
                return Err(Error::config(
                    "dynamic.host_step",
                    "required when hosts join and no schedule is given",
                ));
            }
        }
        Ok(())
    }
}
