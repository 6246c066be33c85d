//! Scoring policies: causal, predictive and hybrid rankings of units.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aipw::{ComplementFit, CrossFit};
use crate::data::{Covariates, Dataset};
use crate::error::{Error, Result};
use crate::forest::{fit_regression_forest, ForestModel, ForestParams, Propensity, Target};
use crate::link::{expit, ClippedLogit};
use crate::logistic::{fit_logistic, LogitDesign, LogitFit};
use crate::par::map_indexed;
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyName {
    #[serde(rename = "NonParametricCATE")]
    NonParametricCate,
    NegativeBaseline,
    PositiveBaseline,
    LogitFromBaseline,
    HybridLogit,
    CateFromBaseline,
    CateFromBaselineAndCate,
    PredictedFlag,
    Oracle,
    Random,
}

impl PolicyName {
    pub const ALL: [PolicyName; 10] = [
        PolicyName::NonParametricCate,
        PolicyName::NegativeBaseline,
        PolicyName::PositiveBaseline,
        PolicyName::LogitFromBaseline,
        PolicyName::HybridLogit,
        PolicyName::CateFromBaseline,
        PolicyName::CateFromBaselineAndCate,
        PolicyName::PredictedFlag,
        PolicyName::Oracle,
        PolicyName::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::NonParametricCate => "NonParametricCATE",
            PolicyName::NegativeBaseline => "NegativeBaseline",
            PolicyName::PositiveBaseline => "PositiveBaseline",
            PolicyName::LogitFromBaseline => "LogitFromBaseline",
            PolicyName::HybridLogit => "HybridLogit",
            PolicyName::CateFromBaseline => "CateFromBaseline",
            PolicyName::CateFromBaselineAndCate => "CateFromBaselineAndCate",
            PolicyName::PredictedFlag => "PredictedFlag",
            PolicyName::Oracle => "Oracle",
            PolicyName::Random => "Random",
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config("policies", format!("unknown policy `{s}`")))
    }
}

/// Units ranked by `score`, highest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoringPolicy {
    pub name: PolicyName,
    pub score: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl ScoringPolicy {
    pub fn new(name: PolicyName, score: Vec<f64>) -> Result<Self> {
        if score.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidData(format!("{name} produced a non-finite score")));
        }
        Ok(ScoringPolicy { name, score, metadata: BTreeMap::new() })
    }

    fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }
}

/// Settings for the policies that fit their own models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub seed: u64,
    /// Causal forests of the CATE-from-baseline policies. A `min_node_size`
    /// of 0 resolves to `max(200, n / 50)`.
    #[serde(deserialize_with = "deserialize_cate_forest")]
    pub cate_forest: ForestParams,
    /// Regression forest predicting the auxiliary flag.
    pub flag_forest: ForestParams,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            seed: 0,
            cate_forest: ForestParams { n_trees: 500, min_node_size: 0, ..ForestParams::default() },
            flag_forest: ForestParams::default(),
        }
    }
}

fn deserialize_cate_forest<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<ForestParams, D::Error> {
    crate::forest::deserialize_over(PolicyConfig::default().cate_forest, d)
}

impl PolicyConfig {
    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.cate_forest.n_trees = n_trees;
        self.flag_forest.n_trees = n_trees;
        self
    }

    /// Leaf size of the CATE-from-baseline forests for `n` units.
    pub fn cate_min_node_size(&self, n: usize) -> usize {
        match self.cate_forest.min_node_size {
            0 => (n / 50).max(200),
            m => m,
        }
    }
}

/// `g = logit(f + tau) - logit(f)`, the log-odds effect implied by a baseline
/// probability and a probability-scale effect.
pub fn g_tilde(f_hat: f64, tau_hat: f64, clip: &mut ClippedLogit) -> f64 {
    clip.apply(f_hat + tau_hat) - clip.apply(f_hat)
}

/// Probability-scale effect implied by the constant-log-odds-effect logit
/// `a + a_f f + b t`.
pub fn logit_from_baseline_score(fit: &LogitFit, f_tilde: f64) -> f64 {
    let c = &fit.coefficients;
    let base = c[0] + c[1] * f_tilde;
    expit(base + c[2]) - expit(base)
}

/// Probability-scale effect implied by the hybrid logit with coefficients
/// `[a, a_f, a_g, b, b_f, b_g]` on `{1, f, g, t, t f, t g}`.
pub fn hybrid_score(c: &[f64], f_tilde: f64, g_tilde: f64) -> f64 {
    let base = c[0] + c[1] * f_tilde + c[2] * g_tilde;
    expit(base + c[3] + c[4] * f_tilde + c[5] * g_tilde) - expit(base)
}

fn logit_design(comp: &ComplementFit, data: &Dataset, hybrid: bool, clip: &mut ClippedLogit) -> (LogitDesign, Vec<f64>) {
    let m = comp.units.len();
    let f: Vec<f64> = comp.f_hat.iter().map(|&f| clip.apply(f)).collect();
    let t: Vec<f64> = comp.units.iter().map(|&i| f64::from(data.treatment[i])).collect();
    let y: Vec<f64> = comp.units.iter().map(|&i| data.y(i)).collect();
    let mut design = LogitDesign::new(m).column("f_tilde", f.clone());
    if hybrid {
        let g: Vec<f64> = comp.f_hat.iter().zip(&comp.tau_hat).map(|(&f, &tau)| g_tilde(f, tau, clip)).collect();
        let tf = t.iter().zip(&f).map(|(a, b)| a * b).collect();
        let tg = t.iter().zip(&g).map(|(a, b)| a * b).collect();
        design = design.column("g_tilde", g).column("t", t).column("t_f_tilde", tf).column("t_g_tilde", tg);
    } else {
        design = design.column("t", t);
    }
    (design, y)
}

struct FoldScores {
    units: Vec<usize>,
    score: Vec<f64>,
    converged: bool,
    clipped: usize,
}

fn per_fold<F>(fit: &CrossFit, f: F) -> Result<Vec<FoldScores>>
where
    F: Fn(usize, &ComplementFit, &[usize]) -> Result<FoldScores> + Sync + Send,
{
    let folds = &fit.scores.folds;
    map_indexed(folds.k, |k| f(k, &fit.complement[k], &folds.members(k))).into_iter().collect()
}

fn assemble(name: PolicyName, n: usize, parts: Vec<FoldScores>) -> Result<ScoringPolicy> {
    let mut score = vec![0.0; n];
    let mut converged = 0;
    let mut clipped = 0;
    let k = parts.len();
    for p in parts {
        for (u, s) in p.units.into_iter().zip(p.score) {
            score[u] = s;
        }
        converged += usize::from(p.converged);
        clipped += p.clipped;
    }
    Ok(ScoringPolicy::new(name, score)?
        .with_meta("converged_folds", format!("{converged}/{k}"))
        .with_meta("clipped_logits", clipped))
}

/// Builds a policy from cross-fitted nuisances. Every score of a unit is
/// produced by models fitted without the unit's fold.
pub fn build_policy(name: PolicyName, data: &Dataset, fit: &CrossFit, config: &PolicyConfig) -> Result<ScoringPolicy> {
    let s = &fit.scores;
    let n = data.n();
    if s.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: s.n() });
    }
    match name {
        PolicyName::NonParametricCate => ScoringPolicy::new(name, s.tau_hat.clone()),
        PolicyName::NegativeBaseline => ScoringPolicy::new(name, s.f_hat.iter().map(|f| -f).collect()),
        PolicyName::PositiveBaseline => ScoringPolicy::new(name, s.f_hat.clone()),
        PolicyName::Oracle => {
            let truth = data.truth.as_ref().ok_or(Error::MissingTruth)?;
            ScoringPolicy::new(name, truth.cate.clone())
        }
        PolicyName::Random => {
            let mut perm: Vec<f64> = (0..n).map(|i| i as f64).collect();
            perm.shuffle(&mut stream_rng(derive_seed(config.seed, "policy.random", 0), 0));
            ScoringPolicy::new(name, perm)
        }
        PolicyName::LogitFromBaseline | PolicyName::HybridLogit => {
            let hybrid = name == PolicyName::HybridLogit;
            let parts = per_fold(fit, |_, comp, members| {
                let mut clip = ClippedLogit::default();
                let (design, y) = logit_design(comp, data, hybrid, &mut clip);
                let model = fit_logistic(&design, &y, None)?;
                let score = members
                    .iter()
                    .map(|&i| {
                        let f = clip.apply(s.f_hat[i]);
                        if hybrid {
                            hybrid_score(&model.coefficients, f, g_tilde(s.f_hat[i], s.tau_hat[i], &mut clip))
                        } else {
                            logit_from_baseline_score(&model, f)
                        }
                    })
                    .collect();
                Ok(FoldScores { units: members.to_vec(), score, converged: model.converged, clipped: clip.clipped })
            })?;
            assemble(name, n, parts)
        }
        PolicyName::CateFromBaseline | PolicyName::CateFromBaselineAndCate => {
            let with_cate = name == PolicyName::CateFromBaselineAndCate;
            let min_node_size = config.cate_min_node_size(n);
            let features = |f: &[f64], tau: &[f64]| -> Result<Covariates> {
                let d = 1 + usize::from(with_cate);
                let mut v = Vec::with_capacity(f.len() * d);
                for (a, b) in f.iter().zip(tau) {
                    v.push(*a);
                    if with_cate {
                        v.push(*b);
                    }
                }
                Covariates::new(f.len(), d, v)
            };
            let parts = per_fold(fit, |k, comp, members| {
                let params = ForestParams {
                    min_node_size,
                    seed: derive_seed(config.seed, "policy.cate_from_baseline", k as u64),
                    ..config.cate_forest.clone()
                };
                let x = features(&comp.f_hat, &comp.tau_hat)?;
                let y: Vec<f64> = comp.units.iter().map(|&i| data.y(i)).collect();
                let t: Vec<bool> = comp.units.iter().map(|&i| data.is_treated(i)).collect();
                let forest = ForestModel::fit_causal(&x, &y, &t, &Propensity::Known(comp.p_hat.clone()), &params)?;
                let f: Vec<f64> = members.iter().map(|&i| s.f_hat[i]).collect();
                let tau: Vec<f64> = members.iter().map(|&i| s.tau_hat[i]).collect();
                let score = forest.predict_all(&features(&f, &tau)?)?;
                Ok(FoldScores { units: members.to_vec(), score, converged: true, clipped: 0 })
            })?;
            Ok(assemble(name, n, parts)?.with_meta("min_node_size", min_node_size).with_meta("n_trees", config.cate_forest.n_trees))
        }
        PolicyName::PredictedFlag => {
            if data.flag.is_none() {
                return Err(Error::InvalidData("PredictedFlag requires a flag column".into()));
            }
            let parts = per_fold(fit, |k, comp, members| {
                let params =
                    ForestParams { seed: derive_seed(config.seed, "policy.flag", k as u64), ..config.flag_forest.clone() };
                let forest = fit_regression_forest(data, Target::Flag, Some(&comp.units), &params)?;
                let score = forest.predict_all(&data.covariates.select_rows(members))?;
                Ok(FoldScores { units: members.to_vec(), score, converged: true, clipped: 0 })
            })?;
            assemble(name, n, parts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_tilde_closed_form() {
        let mut clip = ClippedLogit::default();
        assert!((g_tilde(0.5, 0.1, &mut clip) - 1.5f64.ln()).abs() < 1e-12);
        assert!((g_tilde(0.5, 0.1, &mut clip) - 0.405465).abs() < 1e-6);
        assert_eq!(clip.clipped, 0);
    }

    #[test]
    fn hybrid_recovers_nonparametric_cate() {
        let c = [0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mut clip = ClippedLogit::default();
        for (f, tau) in [(0.3, 0.1), (0.8, -0.2), (0.05, 0.4), (0.5, 0.0)] {
            let score = hybrid_score(&c, clip.apply(f), g_tilde(f, tau, &mut clip));
            assert!((score - tau).abs() < 1e-12, "{f} {tau} {score}");
        }
    }

    #[test]
    fn names_round_trip() {
        for p in PolicyName::ALL {
            assert_eq!(p.as_str().parse::<PolicyName>().unwrap(), p);
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json, format!("\"{p}\""));
        }
        assert!("Clairvoyant".parse::<PolicyName>().is_err());
    }

    #[test]
    fn cate_forest_regularization_default() {
        let c = PolicyConfig::default();
        assert_eq!(c.cate_min_node_size(5000), 200);
        assert_eq!(c.cate_min_node_size(20000), 400);
        assert_eq!(c.cate_forest.n_trees, 500);
    }
}
