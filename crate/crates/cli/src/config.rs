//! Run configuration shared by all verbs.
//!
//! Every seed used by a command is derived from the single master seed as
//! `derive_seed(master, stage, 0)`, with the stage tags `dgp`, `folds`,
//! `nuisance`, `policy`, `rate` and `simulate`. Tags do not depend on the
//! verb, so `evaluate`, `rate` and `sweep` fit identical models for identical
//! settings. Seeds written inside sub-blocks are overwritten.

use std::path::{Path, PathBuf};

use ctarget::aipw::{NuisanceParams, PropensityMode};
use ctarget::dgp::DgpConfig;
use ctarget::rng::derive_seed;
use ctarget::targeting::{default_q_grid, Evaluation, PolicyConfig, PolicyName, RateConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    /// Dataset CSV with columns `x0..,t,y,batch[,flag]`.
    pub dataset: PathBuf,
    /// `design.json` with the batch propensities; empirical shares otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<PathBuf>,
    /// Truth sidecar `unit,f_true,tau_true`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Score file from `evaluate`, required by `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuisances: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub min_node_size: Vec<usize>,
    pub n_trees: Vec<usize>,
    #[serde(default = "default_sweep_q")]
    pub q: f64,
    #[serde(default = "default_sweep_policies")]
    pub policies: Vec<PolicyName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub lambdas: Vec<f64>,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default = "default_sim_policies")]
    pub policies: Vec<PolicyName>,
    #[serde(default = "default_evaluation")]
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataFiles>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_mode")]
    pub propensity_mode: PropensityMode,
    #[serde(default)]
    pub nuisance: NuisanceParams,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyName>,
    #[serde(default = "default_q_grid")]
    pub q_grid: Vec<f64>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub rate: RateConfig,
    #[serde(default = "default_groups")]
    pub gates_groups: usize,
    /// Centering constant of the calibration regression; each unit's
    /// propensity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_share: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationBlock>,
    /// Seed of the fold partition; derived, not read.
    #[serde(default, skip_deserializing)]
    pub fold_seed: u64,
    #[serde(default, skip_deserializing)]
    pub simulation_seed: u64,
}

fn default_folds() -> usize {
    10
}
fn default_mode() -> PropensityMode {
    PropensityMode::KnownConstantPerBatch
}
fn default_policies() -> Vec<PolicyName> {
    vec![
        PolicyName::NonParametricCate,
        PolicyName::NegativeBaseline,
        PolicyName::PositiveBaseline,
        PolicyName::LogitFromBaseline,
        PolicyName::HybridLogit,
        PolicyName::Random,
    ]
}
fn default_groups() -> usize {
    4
}
fn default_sweep_q() -> f64 {
    0.5
}
fn default_sweep_policies() -> Vec<PolicyName> {
    vec![PolicyName::NonParametricCate]
}
fn default_draws() -> usize {
    20
}
fn default_sim_policies() -> Vec<PolicyName> {
    vec![PolicyName::NonParametricCate, PolicyName::LogitFromBaseline, PolicyName::HybridLogit, PolicyName::Random]
}
fn default_evaluation() -> Evaluation {
    Evaluation::Truth
}

impl RunConfig {
    /// Parses a config file, applies the seed override, resolves data paths
    /// against the config file's directory and derives every stage seed.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Read { path: path.to_path_buf(), source: e })?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = seed_override {
            config.seed = s;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(files) = &mut config.data {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut files.dataset);
            files.design.as_mut().map(fix);
            files.truth.as_mut().map(fix);
            files.nuisances.as_mut().map(fix);
        }
        config.derive_seeds();
        Ok(config)
    }

    pub fn derive_seeds(&mut self) {
        let m = self.seed;
        if let Some(dgp) = &mut self.dgp {
            dgp.seed = derive_seed(m, "dgp", 0);
        }
        self.nuisance = self.nuisance.clone().with_seed(derive_seed(m, "nuisance", 0));
        self.policy.seed = derive_seed(m, "policy", 0);
        self.rate.seed = derive_seed(m, "rate", 0);
        self.fold_seed = derive_seed(m, "folds", 0);
        self.simulation_seed = derive_seed(m, "simulate", 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "foldz": 3}"#).unwrap_err();
        assert!(err.to_string().contains("foldz"));
    }

    #[test]
    fn defaults_fill_missing_blocks() {
        let mut c: RunConfig = serde_json::from_str("{}").unwrap();
        c.derive_seeds();
        assert_eq!(c.folds, 10);
        assert_eq!(c.q_grid.len(), 21);
        assert_eq!(c.nuisance.causal.min_node_size, 10);
        assert_ne!(c.fold_seed, c.policy.seed);
    }
}
