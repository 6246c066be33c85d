//! Semi-synthetic study: outcomes are re-drawn from fitted estimates with a
//! heterogeneity multiplier, and policies are compared on the known effects.

use serde::{Deserialize, Serialize};

use crate::aipw::{crossfit_nuisances, NuisanceParams, PropensityMode};
use crate::data::Dataset;
use crate::dgp::{semisynthetic_redraw, RedrawSpec, REDRAW_PROPENSITY};
use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::io::fmt_f64;
use crate::par::map_indexed;
use crate::rng::derive_seed;
use crate::stats::median;

use super::curve::{default_q_grid, fold_assignment, policy_value_curve, validate_q_grid};
use super::policy::{build_policy, PolicyConfig, PolicyName, ScoringPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Value computed from the simulated true effects.
    Truth,
    /// AIPW estimate from the re-fitted scores.
    Aipw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub lambdas: Vec<f64>,
    pub n_draws: usize,
    /// Oracle is always added.
    pub policies: Vec<PolicyName>,
    pub q_grid: Vec<f64>,
    pub nuisance: NuisanceParams,
    pub policy: PolicyConfig,
    pub evaluation: Evaluation,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            lambdas: vec![0.0, 0.5, 1.0, 3.0],
            n_draws: 20,
            policies: vec![
                PolicyName::NonParametricCate,
                PolicyName::LogitFromBaseline,
                PolicyName::HybridLogit,
                PolicyName::Random,
            ],
            q_grid: default_q_grid(),
            nuisance: NuisanceParams::default(),
            policy: PolicyConfig::default(),
            evaluation: Evaluation::Truth,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::config("lambdas", "must list at least one value"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::config("lambdas", format!("{l} is not a finite nonnegative number")));
        }
        if self.n_draws == 0 {
            return Err(Error::config("n_draws", "must be positive"));
        }
        validate_q_grid(&self.q_grid)
    }

    fn resolved_policies(&self) -> Vec<PolicyName> {
        let mut p: Vec<PolicyName> = vec![PolicyName::Oracle];
        p.extend(self.policies.iter().copied().filter(|&x| x != PolicyName::Oracle));
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedCurve {
    pub policy: PolicyName,
    /// Mean over draws.
    pub value: Vec<f64>,
    /// `per_draw[d][j]`.
    pub per_draw: Vec<Vec<f64>>,
}

impl SimulatedCurve {
    /// Median over draws at grid index `j`.
    pub fn median_at(&self, j: usize) -> f64 {
        median(&self.per_draw.iter().map(|d| d[j]).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaPanel {
    pub lambda: f64,
    pub curves: Vec<SimulatedCurve>,
}

impl LambdaPanel {
    pub fn curve(&self, policy: PolicyName) -> Option<&SimulatedCurve> {
        self.curves.iter().find(|c| c.policy == policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub q_grid: Vec<f64>,
    pub n_draws: usize,
    pub redraw_propensity: f64,
    pub evaluation: Evaluation,
    /// Probabilities clipped while forming the logit-scale inputs.
    pub clipped: usize,
    pub panels: Vec<LambdaPanel>,
}

/// Fold-averaged value `mean(f + pi tau)` of treating by `policy`, computed
/// from the true baseline and effects.
pub fn true_policy_value(policy: &ScoringPolicy, data: &Dataset, folds: &FoldAssignment, q_grid: &[f64]) -> Result<Vec<f64>> {
    let truth = data.truth.as_ref().ok_or(Error::MissingTruth)?;
    let mut value = vec![0.0; q_grid.len()];
    for k in 0..folds.k {
        let members = folds.members(k);
        let nk = members.len() as f64;
        let base: f64 = members.iter().map(|&i| truth.baseline[i]).sum();
        for (j, &q) in q_grid.iter().enumerate() {
            let pi = fold_assignment(&policy.score, &members, q);
            let gain: f64 = members.iter().zip(&pi).filter(|(_, &p)| p).map(|(&i, _)| truth.cate[i]).sum();
            value[j] += (base + gain) / nk;
        }
    }
    value.iter_mut().for_each(|v| *v /= folds.k as f64);
    Ok(value)
}

/// Runs the semi-synthetic study on the covariates of `data`, re-drawing from
/// the estimates `f_hat`, `tau_hat` and re-using `folds` in every draw.
pub fn simulation_study(
    data: &Dataset,
    f_hat: &[f64],
    tau_hat: &[f64],
    folds: &FoldAssignment,
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    config.validate()?;
    if folds.n != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: folds.n });
    }
    let (base, clipped) = RedrawSpec::from_estimates(f_hat, tau_hat, 1.0, 0)?;
    let policies = config.resolved_policies();
    let nd = config.n_draws;
    let jobs = config.lambdas.len() * nd;
    let runs: Vec<Vec<Vec<f64>>> = map_indexed(jobs, |job| -> Result<Vec<Vec<f64>>> {
        let lambda = config.lambdas[job / nd];
        let spec = RedrawSpec { lambda, seed: derive_seed(config.seed, "simulate.redraw", job as u64), ..base.clone() };
        let redrawn = semisynthetic_redraw(data, &spec)?;
        let nuisance = config.nuisance.clone().with_seed(derive_seed(config.seed, "simulate.nuisance", job as u64));
        let fit = crossfit_nuisances(&redrawn, folds, &nuisance, PropensityMode::KnownConstantPerBatch)?;
        let policy_config =
            PolicyConfig { seed: derive_seed(config.seed, "simulate.policy", job as u64), ..config.policy.clone() };
        policies
            .iter()
            .map(|&name| {
                let p = build_policy(name, &redrawn, &fit, &policy_config)?;
                match config.evaluation {
                    Evaluation::Truth => true_policy_value(&p, &redrawn, folds, &config.q_grid),
                    Evaluation::Aipw => Ok(policy_value_curve(&p, &fit.scores, &config.q_grid)?.value),
                }
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let nq = config.q_grid.len();
    let panels = config
        .lambdas
        .iter()
        .enumerate()
        .map(|(li, &lambda)| {
            let draws = &runs[li * nd..(li + 1) * nd];
            let curves = policies
                .iter()
                .enumerate()
                .map(|(pi, &policy)| {
                    let per_draw: Vec<Vec<f64>> = draws.iter().map(|d| d[pi].clone()).collect();
                    let value = (0..nq).map(|j| per_draw.iter().map(|d| d[j]).sum::<f64>() / nd as f64).collect();
                    SimulatedCurve { policy, value, per_draw }
                })
                .collect();
            LambdaPanel { lambda, curves }
        })
        .collect();
    Ok(SimulationResult {
        q_grid: config.q_grid.clone(),
        n_draws: nd,
        redraw_propensity: REDRAW_PROPENSITY,
        evaluation: config.evaluation,
        clipped,
        panels,
    })
}

/// `lambda,policy,q,value,median,n_draws`.
pub fn write_simulation_csv<W: std::io::Write>(result: &SimulationResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "policy", "q", "value", "median", "n_draws"])?;
    for panel in &result.panels {
        for c in &panel.curves {
            for (j, q) in result.q_grid.iter().enumerate() {
                w.write_record([
                    &fmt_f64(panel.lambda),
                    c.policy.as_str(),
                    &fmt_f64(*q),
                    &fmt_f64(c.value[j]),
                    &fmt_f64(c.median_at(j)),
                    &result.n_draws.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
