//! The three demo operations, on small synthetic trials.

use ctarget::aipw::{crossfit_nuisances, CrossFit, NuisanceParams, PropensityMode};
use ctarget::ate::{ate_aipw, ate_mean_difference, Estimate};
use ctarget::dgp::{generate_synthetic, BaselineSpec, BatchSpec, CovariateLaw, DgpConfig, EffectSpec};
use ctarget::folds::make_folds;
use ctarget::heterogeneity::{calibration_regression, gates};
use ctarget::rng::derive_seed;
use ctarget::svg::{curves_chart, simulation_chart};
use ctarget::targeting::{
    build_policy, default_q_grid, policy_value_curve, rate_autoc, simulation_study, PolicyConfig, PolicyName,
    RateConfig, SimulationConfig,
};
use ctarget::{Dataset, Result};
use serde::{Deserialize, Serialize};

/// Shape of the log-odds treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// Largest for units with a middling baseline.
    Peaked,
    /// Grows with one covariate unrelated to the baseline.
    Linear,
    /// The same log-odds effect for everyone.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub n_units: usize,
    pub seed: u64,
    pub n_trees: usize,
    pub folds: usize,
    pub heterogeneity: Heterogeneity,
    /// Multipliers for [`redraw_study`].
    pub lambdas: Vec<f64>,
    pub n_draws: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            n_units: 2000,
            seed: 1,
            n_trees: 50,
            folds: 5,
            heterogeneity: Heterogeneity::Peaked,
            lambdas: vec![0.0, 1.0, 3.0],
            n_draws: 3,
        }
    }
}

const POLICIES: [PolicyName; 6] = [
    PolicyName::NonParametricCate,
    PolicyName::NegativeBaseline,
    PolicyName::LogitFromBaseline,
    PolicyName::HybridLogit,
    PolicyName::Oracle,
    PolicyName::Random,
];

impl Settings {
    fn dgp(&self) -> DgpConfig {
        let effect_spec = match self.heterogeneity {
            Heterogeneity::Peaked => EffectSpec::UShapeInBaseline { intercept: 1.5, curvature: -3.0, center: 0.0 },
            Heterogeneity::Linear => EffectSpec::LinearInOneCovariate { intercept: -1.5, feature: 1, slope: 3.5 },
            Heterogeneity::None => EffectSpec::Constant { value: 0.5 },
        };
        DgpConfig {
            n_units: self.n_units,
            n_covariates: 4,
            covariate_law: CovariateLaw::Uniform01,
            baseline_spec: BaselineSpec::Linear { intercept: -1.0, coefficients: vec![2.0] },
            effect_spec,
            batches: vec![
                BatchSpec { size_fraction: 0.5, treat_propensity: 0.5 },
                BatchSpec { size_fraction: 0.5, treat_propensity: 0.3 },
            ],
            aux_flag: None,
            seed: derive_seed(self.seed, "dgp", 0),
        }
    }

    fn nuisance(&self) -> NuisanceParams {
        NuisanceParams::default().with_trees(self.n_trees).with_seed(derive_seed(self.seed, "nuisance", 0))
    }

    fn policy_config(&self) -> PolicyConfig {
        PolicyConfig { seed: derive_seed(self.seed, "policy", 0), ..PolicyConfig::default() }
    }

    fn fit(&self) -> Result<(Dataset, CrossFit)> {
        let data = generate_synthetic(&self.dgp())?;
        let folds = make_folds(data.n(), self.folds, derive_seed(self.seed, "folds", 0))?;
        let fit = crossfit_nuisances(&data, &folds, &self.nuisance(), PropensityMode::KnownConstantPerBatch)?;
        Ok((data, fit))
    }
}

#[derive(Debug, Serialize)]
struct PolicyRow {
    policy: &'static str,
    value_at_half: f64,
    delta_at_half: f64,
    se_at_half: f64,
    autoc: f64,
    autoc_se: f64,
    autoc_p: f64,
}

#[derive(Debug, Serialize)]
struct PolicyReport {
    svg: String,
    true_ate: f64,
    mean_difference: Estimate,
    aipw: Estimate,
    policies: Vec<PolicyRow>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value).expect("demo reports serialize"))
}

pub fn evaluate_policies(settings: &Settings) -> Result<String> {
    let (data, fit) = settings.fit()?;
    let q_grid = default_q_grid();
    let half = q_grid.iter().position(|&q| (q - 0.5).abs() < 1e-12).expect("grid contains 0.5");
    let rate_config = RateConfig { replicates: 100, seed: derive_seed(settings.seed, "rate", 0) };
    let mut curves = Vec::new();
    let mut rows = Vec::new();
    for name in POLICIES {
        let policy = build_policy(name, &data, &fit, &settings.policy_config())?;
        let curve = policy_value_curve(&policy, &fit.scores, &q_grid)?;
        let rate = rate_autoc(&policy, &fit.scores, &q_grid, &rate_config)?;
        rows.push(PolicyRow {
            policy: name.as_str(),
            value_at_half: curve.value[half],
            delta_at_half: curve.delta_vs_random[half],
            se_at_half: curve.se_delta[half],
            autoc: rate.autoc,
            autoc_se: rate.se,
            autoc_p: rate.p_one_sided,
        });
        curves.push(curve);
    }
    let truth = data.truth.as_ref().expect("synthetic data carries truth");
    to_json(&PolicyReport {
        svg: curves_chart(&curves, "Estimated outcome rate by fraction treated"),
        true_ate: truth.cate.iter().sum::<f64>() / truth.cate.len() as f64,
        mean_difference: ate_mean_difference(&data)?,
        aipw: ate_aipw(&fit.scores),
        policies: rows,
    })
}

#[derive(Debug, Serialize)]
struct HeterogeneityReport {
    gates: Vec<Estimate>,
    top_minus_bottom: Estimate,
    calibration_slope: f64,
    calibration_se: f64,
    calibration_p: f64,
}

pub fn heterogeneity_tests(settings: &Settings) -> Result<String> {
    let (data, fit) = settings.fit()?;
    let g = gates(&fit.scores, 4)?;
    let top = g.pairwise.iter().find(|p| p.upper == 3 && p.lower == 0).expect("quartile pairs");
    let cal = calibration_regression(&data, &fit.scores, None)?;
    to_json(&HeterogeneityReport {
        gates: g.group_ate.clone(),
        top_minus_bottom: Estimate { estimate: top.difference, se: top.se },
        calibration_slope: cal.slope,
        calibration_se: cal.se,
        calibration_p: cal.p_value_one_sided,
    })
}

#[derive(Debug, Serialize)]
struct StudyReport {
    svg: String,
    clipped: usize,
}

pub fn redraw_study(settings: &Settings) -> Result<String> {
    let (data, fit) = settings.fit()?;
    let config = SimulationConfig {
        lambdas: settings.lambdas.clone(),
        n_draws: settings.n_draws,
        nuisance: settings.nuisance(),
        policy: settings.policy_config(),
        seed: derive_seed(settings.seed, "simulate", 0),
        ..SimulationConfig::default()
    };
    let result = simulation_study(&data, &fit.scores.f_hat, &fit.scores.tau_hat, &fit.scores.folds, &config)?;
    to_json(&StudyReport { svg: simulation_chart(&result), clipped: result.clipped })
}
