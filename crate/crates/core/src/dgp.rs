//! Synthetic randomized trials with known ground truth, and semi-synthetic
//! outcome re-draws with a heterogeneity multiplier.
//!
//! Outcomes follow `logit P(Y = 1 | x, t) = a(x) + b(x) t`, where the baseline
//! `a` and the log-odds effect `b` are picked from closed catalogs. The
//! implied truth is `f(x) = expit(a(x))` and
//! `tau(x) = expit(a(x) + b(x)) - expit(a(x))`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset, Truth};
use crate::error::{Error, Result};
use crate::link::{expit, ClippedLogit};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::mean;

/// Treatment probability used by [`semisynthetic_redraw`].
pub const REDRAW_PROPENSITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    Uniform01,
    StandardNormal,
    /// Even columns Bernoulli(1/2), odd columns standard normal.
    MixedBinaryContinuous,
}

/// Logit-scale baseline `a(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSpec {
    /// `intercept + sum_j coefficients[j] * x_j`; missing coefficients are zero.
    Linear { intercept: f64, coefficients: Vec<f64> },
    /// `intercept + jump * 1(x_feature > threshold)`.
    Step { intercept: f64, feature: usize, threshold: f64, jump: f64 },
    /// `intercept + amplitude * sin(2 pi frequency x_feature)`.
    Sinusoidal { intercept: f64, feature: usize, amplitude: f64, frequency: f64 },
    /// `intercept + coefficient * x_i * x_j`.
    Interaction { intercept: f64, features: [usize; 2], coefficient: f64 },
}

/// Logit-scale treatment effect `b(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectSpec {
    Zero,
    Constant { value: f64 },
    /// `intercept + slope * x_feature`.
    LinearInOneCovariate { intercept: f64, feature: usize, slope: f64 },
    /// `intercept + curvature * (a(x) - center)^2`; a negative curvature makes
    /// the log-odds effect peak where the baseline log-odds equal `center`.
    UShapeInBaseline { intercept: f64, curvature: f64, center: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub size_fraction: f64,
    pub treat_propensity: f64,
}

/// Auxiliary binary label `1(tau(x) + noise_sd * z > threshold)`, a stand-in
/// for an observed covariate that is predictive of the effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagSpec {
    pub noise_sd: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_covariates: usize,
    pub covariate_law: CovariateLaw,
    pub baseline_spec: BaselineSpec,
    pub effect_spec: EffectSpec,
    pub batches: Vec<BatchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_flag: Option<FlagSpec>,
    #[serde(default)]
    pub seed: u64,
}

fn check_feature(field: &str, j: usize, d: usize) -> Result<()> {
    if j >= d {
        return Err(Error::config(field, format!("feature {j} out of range for {d} covariates")));
    }
    Ok(())
}

impl BaselineSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BaselineSpec::Linear { intercept, coefficients } => {
                intercept + coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
            }
            BaselineSpec::Step { intercept, feature, threshold, jump } => {
                intercept + if x[*feature] > *threshold { *jump } else { 0.0 }
            }
            BaselineSpec::Sinusoidal { intercept, feature, amplitude, frequency } => {
                intercept + amplitude * (2.0 * std::f64::consts::PI * frequency * x[*feature]).sin()
            }
            BaselineSpec::Interaction { intercept, features, coefficient } => {
                intercept + coefficient * x[features[0]] * x[features[1]]
            }
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            BaselineSpec::Linear { coefficients, .. } if coefficients.len() > d => Err(Error::config(
                "baseline_spec.coefficients",
                format!("{} coefficients for {d} covariates", coefficients.len()),
            )),
            BaselineSpec::Linear { .. } => Ok(()),
            BaselineSpec::Step { feature, .. } | BaselineSpec::Sinusoidal { feature, .. } => {
                check_feature("baseline_spec.feature", *feature, d)
            }
            BaselineSpec::Interaction { features, .. } => {
                check_feature("baseline_spec.features", features[0], d)?;
                check_feature("baseline_spec.features", features[1], d)
            }
        }
    }
}

impl EffectSpec {
    /// Log-odds effect at `x` given the baseline log-odds `a`.
    pub fn eval(&self, x: &[f64], a: f64) -> f64 {
        match self {
            EffectSpec::Zero => 0.0,
            EffectSpec::Constant { value } => *value,
            EffectSpec::LinearInOneCovariate { intercept, feature, slope } => intercept + slope * x[*feature],
            EffectSpec::UShapeInBaseline { intercept, curvature, center } => {
                intercept + curvature * (a - center) * (a - center)
            }
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            EffectSpec::LinearInOneCovariate { feature, .. } => check_feature("effect_spec.feature", *feature, d),
            _ => Ok(()),
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::config("n_units", "must be positive"));
        }
        if self.n_covariates == 0 {
            return Err(Error::config("n_covariates", "must be positive"));
        }
        if self.batches.is_empty() {
            return Err(Error::config("batches", "at least one batch is required"));
        }
        for (b, spec) in self.batches.iter().enumerate() {
            if !(spec.size_fraction > 0.0 && spec.size_fraction <= 1.0) {
                return Err(Error::config(
                    format!("batches[{b}].size_fraction"),
                    format!("{} is not in (0, 1]", spec.size_fraction),
                ));
            }
            if !(spec.treat_propensity > 0.0 && spec.treat_propensity < 1.0) {
                return Err(Error::config(
                    format!("batches[{b}].treat_propensity"),
                    format!("{} is not strictly inside (0, 1)", spec.treat_propensity),
                ));
            }
        }
        let total: f64 = self.batches.iter().map(|b| b.size_fraction).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config("batches.size_fraction", format!("fractions sum to {total}, expected 1")));
        }
        if let Some(flag) = &self.aux_flag {
            if !(flag.noise_sd >= 0.0 && flag.noise_sd.is_finite() && flag.threshold.is_finite()) {
                return Err(Error::config("aux_flag", "noise_sd must be finite and nonnegative"));
            }
        }
        self.baseline_spec.validate(self.n_covariates)?;
        self.effect_spec.validate(self.n_covariates)
    }

    /// Batch id of each unit; batches occupy contiguous index ranges.
    pub fn batch_ids(&self) -> Vec<u32> {
        let n = self.n_units;
        let mut ids = Vec::with_capacity(n);
        let mut cum = 0.0;
        let mut start = 0usize;
        for (b, spec) in self.batches.iter().enumerate() {
            cum += spec.size_fraction;
            let end = if b + 1 == self.batches.len() { n } else { ((cum * n as f64).round() as usize).min(n) };
            ids.extend(std::iter::repeat_n(b as u32, end.saturating_sub(start)));
            start = end.max(start);
        }
        ids
    }
}

fn draw_covariates(law: CovariateLaw, d: usize, rng: &mut impl Rng, out: &mut Vec<f64>) {
    for j in 0..d {
        let v = match law {
            CovariateLaw::Uniform01 => rng.random::<f64>(),
            CovariateLaw::StandardNormal => rng.sample::<f64, _>(StandardNormal),
            CovariateLaw::MixedBinaryContinuous => {
                if j % 2 == 0 {
                    f64::from(u8::from(rng.random::<f64>() < 0.5))
                } else {
                    rng.sample::<f64, _>(StandardNormal)
                }
            }
        };
        out.push(v);
    }
}

/// Draws a synthetic trial. Unit `i` uses stream `i` of a seed derived from
/// `config.seed`, so the result does not depend on evaluation order.
pub fn generate_synthetic(config: &DgpConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_units;
    let d = config.n_covariates;
    let batch = config.batch_ids();
    let propensities: Vec<f64> = config.batches.iter().map(|b| b.treat_propensity).collect();
    let unit_seed = derive_seed(config.seed, "dgp.unit", 0);

    let mut values = Vec::with_capacity(n * d);
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    let mut cate = Vec::with_capacity(n);
    let mut flag = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(unit_seed, i as u64);
        let start = values.len();
        draw_covariates(config.covariate_law, d, &mut rng, &mut values);
        let x = &values[start..];
        let a = config.baseline_spec.eval(x);
        let b = config.effect_spec.eval(x, a);
        let f0 = expit(a);
        let f1 = expit(a + b);
        let t = rng.random::<f64>() < propensities[batch[i] as usize];
        let p = if t { f1 } else { f0 };
        let y = rng.random::<f64>() < p;
        let z: f64 = rng.sample(StandardNormal);
        treatment.push(u8::from(t));
        outcome.push(u8::from(y));
        baseline.push(f0);
        cate.push(f1 - f0);
        if let Some(spec) = &config.aux_flag {
            flag.push(u8::from(f1 - f0 + spec.noise_sd * z > spec.threshold));
        }
    }
    let covariates = Covariates::new(n, d, values)?;
    let mut data = Dataset::new(covariates, treatment, outcome, batch, propensities)?
        .with_truth(Truth { baseline, cate })?;
    if config.aux_flag.is_some() {
        data = data.with_flag(flag)?;
    }
    Ok(data)
}

/// Inputs of the semi-synthetic re-draw
/// `logit P(Y = 1 | x, t) = f(x) + lambda (g(x) - mean g) t + (mean g) t`,
/// with `f`, `g` on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedrawSpec {
    pub lambda: f64,
    pub base_f_tilde: Vec<f64>,
    pub base_g_tilde: Vec<f64>,
    pub mean_g_tilde: f64,
    pub seed: u64,
}

impl RedrawSpec {
    /// Builds the logit-scale inputs from probability-scale estimates:
    /// `f = logit(f_hat)`, `g = logit(f_hat + tau_hat) - logit(f_hat)`.
    /// Returns the redraw inputs and the number of clipped probabilities.
    pub fn from_estimates(f_hat: &[f64], tau_hat: &[f64], lambda: f64, seed: u64) -> Result<(Self, usize)> {
        if f_hat.len() != tau_hat.len() {
            return Err(Error::DimensionMismatch { expected: f_hat.len(), got: tau_hat.len() });
        }
        let mut clip = ClippedLogit::default();
        let mut f_tilde = Vec::with_capacity(f_hat.len());
        let mut g_tilde = Vec::with_capacity(f_hat.len());
        for (&f, &t) in f_hat.iter().zip(tau_hat) {
            let ft = clip.apply(f);
            f_tilde.push(ft);
            g_tilde.push(clip.apply(f + t) - ft);
        }
        let mean_g_tilde = mean(&g_tilde);
        Ok((RedrawSpec { lambda, base_f_tilde: f_tilde, base_g_tilde: g_tilde, mean_g_tilde, seed }, clip.clipped))
    }

    /// Log-odds treatment effect of unit `i`, written so that `lambda = 1`
    /// returns `g_i` and `lambda = 0` returns the mean bit-exactly.
    pub fn log_odds_effect(&self, i: usize) -> f64 {
        self.lambda * self.base_g_tilde[i] + (1.0 - self.lambda) * self.mean_g_tilde
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.base_f_tilde.len() != n || self.base_g_tilde.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.base_f_tilde.len().min(self.base_g_tilde.len()) });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("{} is not a finite nonnegative number", self.lambda)));
        }
        if self.base_f_tilde.iter().chain(&self.base_g_tilde).any(|v| !v.is_finite()) || !self.mean_g_tilde.is_finite() {
            return Err(Error::InvalidData("non-finite logit-scale redraw input".into()));
        }
        let m = mean(&self.base_g_tilde);
        if (m - self.mean_g_tilde).abs() > 1e-10 {
            return Err(Error::InvalidData(format!("mean_g_tilde {} differs from sample mean {m}", self.mean_g_tilde)));
        }
        Ok(())
    }
}

/// Re-randomizes treatment with probability [`REDRAW_PROPENSITY`] and draws new
/// outcomes from the model in [`RedrawSpec`]. Covariates and flag are kept;
/// truth is replaced by the simulated potential-outcome probabilities.
pub fn semisynthetic_redraw(data: &Dataset, spec: &RedrawSpec) -> Result<Dataset> {
    let n = data.n();
    spec.validate(n)?;
    let unit_seed = derive_seed(spec.seed, "dgp.redraw", 0);
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    let mut cate = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(unit_seed, i as u64);
        let f = spec.base_f_tilde[i];
        let f0 = expit(f);
        let f1 = expit(f + spec.log_odds_effect(i));
        let t = rng.random::<f64>() < REDRAW_PROPENSITY;
        let y = rng.random::<f64>() < if t { f1 } else { f0 };
        treatment.push(u8::from(t));
        outcome.push(u8::from(y));
        baseline.push(f0);
        cate.push(f1 - f0);
    }
    let mut out = Dataset::new(data.covariates.clone(), treatment, outcome, vec![0; n], vec![REDRAW_PROPENSITY])?
        .with_truth(Truth { baseline, cate })?;
    if let Some(flag) = &data.flag {
        out = out.with_flag(flag.clone())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::logit;

    pub(crate) fn config(n: usize) -> DgpConfig {
        DgpConfig {
            n_units: n,
            n_covariates: 3,
            covariate_law: CovariateLaw::Uniform01,
            baseline_spec: BaselineSpec::Linear { intercept: -1.0, coefficients: vec![2.0, 0.0, 0.5] },
            effect_spec: EffectSpec::LinearInOneCovariate { intercept: 0.2, feature: 1, slope: 0.8 },
            batches: vec![
                BatchSpec { size_fraction: 0.4, treat_propensity: 0.5 },
                BatchSpec { size_fraction: 0.6, treat_propensity: 0.75 },
            ],
            aux_flag: None,
            seed: 11,
        }
    }

    #[test]
    fn zero_effect_gives_zero_cate() {
        let mut c = config(500);
        c.effect_spec = EffectSpec::Zero;
        let d = generate_synthetic(&c).unwrap();
        assert!(d.truth.unwrap().cate.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&config(300)).unwrap();
        let b = generate_synthetic(&config(300)).unwrap();
        assert_eq!(a, b);
        let mut c = config(300);
        c.seed = 12;
        assert_ne!(a.outcome, generate_synthetic(&c).unwrap().outcome);
    }

    #[test]
    fn batches_and_propensities() {
        let d = generate_synthetic(&config(1000)).unwrap();
        assert_eq!(d.design_propensity, vec![0.5, 0.75]);
        assert_eq!(d.batch.iter().filter(|&&b| b == 0).count(), 400);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut c = config(10);
        c.batches[1].size_fraction = 0.5;
        match generate_synthetic(&c) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "batches.size_fraction"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_propensity_and_empty() {
        let mut c = config(10);
        c.batches[0].treat_propensity = 1.0;
        assert!(generate_synthetic(&c).is_err());
        let mut c = config(0);
        c.n_units = 0;
        assert!(generate_synthetic(&c).is_err());
    }

    #[test]
    fn unknown_catalog_name_is_rejected() {
        let json = r#"{"n_units":10,"n_covariates":1,"covariate_law":"uniform01",
            "baseline_spec":{"kind":"cubic","intercept":0.0},
            "effect_spec":{"kind":"zero"},"batches":[{"size_fraction":1.0,"treat_propensity":0.5}],"seed":1}"#;
        assert!(serde_json::from_str::<DgpConfig>(json).is_err());
        let bad_law = json.replace("uniform01", "cauchy").replace("cubic", "linear\",\"coefficients\":[1.0]");
        assert!(serde_json::from_str::<DgpConfig>(&bad_law).is_err());
    }

    #[test]
    fn truth_is_coherent() {
        let mut c = config(2000);
        c.covariate_law = CovariateLaw::StandardNormal;
        c.effect_spec = EffectSpec::UShapeInBaseline { intercept: 1.0, curvature: -0.3, center: 0.0 };
        let d = generate_synthetic(&c).unwrap();
        let t = d.truth.unwrap();
        for i in 0..d.covariates.n_rows() {
            assert!(t.baseline[i] > 0.0 && t.baseline[i] < 1.0);
            let f1 = t.baseline[i] + t.cate[i];
            assert!((0.0..=1.0).contains(&f1));
        }
    }

    #[test]
    fn aux_flag_tracks_effect() {
        let mut c = config(3000);
        c.aux_flag = Some(FlagSpec { noise_sd: 0.0, threshold: 0.15 });
        let d = generate_synthetic(&c).unwrap();
        let t = d.truth.as_ref().unwrap();
        let flag = d.flag.as_ref().unwrap();
        for i in 0..d.n() {
            assert_eq!(flag[i] == 1, t.cate[i] > 0.15);
        }
    }

    fn redraw_input() -> (Dataset, Vec<f64>, Vec<f64>) {
        let data = generate_synthetic(&config(3)).unwrap();
        (data, vec![0.2, 0.5, 0.7], vec![0.1, -0.05, 0.2])
    }

    #[test]
    fn redraw_lambda_zero_is_constant_log_odds() {
        let (data, f, t) = redraw_input();
        let (spec, _) = RedrawSpec::from_estimates(&f, &t, 0.0, 5).unwrap();
        for i in 0..3 {
            assert_eq!(spec.log_odds_effect(i), spec.mean_g_tilde);
        }
        let out = semisynthetic_redraw(&data, &spec).unwrap();
        let truth = out.truth.unwrap();
        for i in 0..3 {
            let expect = expit(spec.base_f_tilde[i] + spec.mean_g_tilde) - expit(spec.base_f_tilde[i]);
            assert_eq!(truth.cate[i], expect);
        }
    }

    #[test]
    fn redraw_lambda_one_reproduces_plug_in() {
        let (data, f, t) = redraw_input();
        let (spec, clipped) = RedrawSpec::from_estimates(&f, &t, 1.0, 5).unwrap();
        assert_eq!(clipped, 0);
        let truth = semisynthetic_redraw(&data, &spec).unwrap().truth.unwrap();
        for i in 0..3 {
            let ft = spec.base_f_tilde[i];
            assert_eq!(truth.cate[i], expit(ft + spec.base_g_tilde[i]) - expit(ft));
            assert!((truth.cate[i] - t[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn redraw_lambda_two_hand_computed() {
        // f = (0.2, 0.5, 0.7), f + tau = (0.3, 0.45, 0.9)
        let (data, f, t) = redraw_input();
        let (spec, _) = RedrawSpec::from_estimates(&f, &t, 2.0, 5).unwrap();
        let g = [
            (0.3f64 / 0.7).ln() - (0.2f64 / 0.8).ln(),
            (0.45f64 / 0.55).ln(),
            (9.0f64).ln() - (0.7f64 / 0.3).ln(),
        ];
        let gbar = (g[0] + g[1] + g[2]) / 3.0;
        let truth = semisynthetic_redraw(&data, &spec).unwrap().truth.unwrap();
        for i in 0..3 {
            let ft = logit(f[i]);
            let expect = expit(ft + 2.0 * (g[i] - gbar) + gbar) - f[i];
            assert!((truth.cate[i] - expect).abs() < 1e-12, "unit {i}");
        }
    }

    #[test]
    fn redraw_rejects_non_finite() {
        let (data, f, t) = redraw_input();
        let (mut spec, _) = RedrawSpec::from_estimates(&f, &t, 1.0, 5).unwrap();
        spec.base_f_tilde[1] = f64::NAN;
        assert!(semisynthetic_redraw(&data, &spec).is_err());
    }
}
