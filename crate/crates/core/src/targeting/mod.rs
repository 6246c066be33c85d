//! Scoring policies, policy-value curves, RATE tests and the semi-synthetic
//! heterogeneity study.

pub mod curve;
pub mod policy;
pub mod rate;
pub mod simulation;

pub use curve::{default_q_grid, policy_value_curve, simple_difference_value, PolicyCurve};
pub use policy::{build_policy, PolicyConfig, PolicyName, ScoringPolicy};
pub use rate::{rate_autoc, toc_curve, RateConfig, RateResult};
pub use simulation::{simulation_study, Evaluation, SimulationConfig, SimulationResult};
