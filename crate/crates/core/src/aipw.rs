//! Cross-fitted nuisance estimates and doubly-robust (AIPW) scores.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::forest::{fit_causal_forest, fit_regression_forest, ForestParams, Propensity, Target};
use crate::io::fmt_f64;
use crate::logistic::{fit_logistic, LogitDesign};
use crate::par::map_indexed;
use crate::rng::derive_seed;

pub const PROPENSITY_MIN: f64 = 0.01;
pub const PROPENSITY_MAX: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    /// Each unit's batch design probability.
    KnownConstantPerBatch,
    /// Logistic regression of treatment on the covariates, fitted on the
    /// training complement of each fold.
    Estimated,
}

/// Forest settings for the two nuisance models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceParams {
    /// Baseline model `E[Y | X, T = 0]`, fitted on control units.
    pub baseline: ForestParams,
    #[serde(deserialize_with = "crate::forest::deserialize_causal")]
    pub causal: ForestParams,
}

impl Default for NuisanceParams {
    fn default() -> Self {
        NuisanceParams { baseline: ForestParams::default(), causal: ForestParams::causal_default() }
    }
}

impl NuisanceParams {
    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.baseline.n_trees = n_trees;
        self.causal.n_trees = n_trees;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.baseline.seed = seed;
        self.causal.seed = seed;
        self
    }

    /// The exact forest parameters used for fold `k`: both seeds are derived
    /// from the configured seeds and the fold index.
    pub fn for_fold(&self, k: usize) -> (ForestParams, ForestParams) {
        (
            ForestParams { seed: derive_seed(self.baseline.seed, "crossfit.baseline", k as u64), ..self.baseline.clone() },
            ForestParams { seed: derive_seed(self.causal.seed, "crossfit.causal", k as u64), ..self.causal.clone() },
        )
    }
}

/// Per-unit AIPW scores together with the nuisances that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AipwScoreSet {
    pub gamma: Vec<f64>,
    /// Per-unit AIPW score for the control-arm mean, `E[Y(0)]`.
    pub gamma_control: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub folds: FoldAssignment,
    pub propensity_mode: PropensityMode,
    /// Propensities moved into `[0.01, 0.99]`.
    pub clip_count: usize,
}

impl AipwScoreSet {
    /// Assembles scores from given nuisances.
    ///
    /// With `f1 = f + (1 - p) tau` and `f0 = f - p tau`,
    /// `gamma = tau + (t - p) / (p (1 - p)) * (y - f_t)` and the control score
    /// is `f0 + (1 - t) / (1 - p) * (y - f0)`.
    pub fn from_nuisances(
        data: &Dataset,
        f_hat: Vec<f64>,
        tau_hat: Vec<f64>,
        p_hat: Vec<f64>,
        folds: FoldAssignment,
        propensity_mode: PropensityMode,
    ) -> Result<Self> {
        let n = data.n();
        for len in [f_hat.len(), tau_hat.len(), p_hat.len(), folds.n] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if f_hat.iter().chain(&tau_hat).chain(&p_hat).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite nuisance estimate".into()));
        }
        let mut clip_count = 0;
        let p_hat: Vec<f64> = p_hat
            .into_iter()
            .map(|p| {
                let c = p.clamp(PROPENSITY_MIN, PROPENSITY_MAX);
                clip_count += usize::from(c != p);
                c
            })
            .collect();
        let mut gamma = Vec::with_capacity(n);
        let mut gamma_control = Vec::with_capacity(n);
        for i in 0..n {
            let (f, tau, p, y) = (f_hat[i], tau_hat[i], p_hat[i], data.y(i));
            let f0 = f - p * tau;
            if data.is_treated(i) {
                let f1 = f + (1.0 - p) * tau;
                gamma.push(tau + (y - f1) / p);
                gamma_control.push(f0);
            } else {
                gamma.push(tau - (y - f0) / (1.0 - p));
                gamma_control.push(f0 + (y - f0) / (1.0 - p));
            }
        }
        Ok(AipwScoreSet { gamma, gamma_control, f_hat, tau_hat, p_hat, folds, propensity_mode, clip_count })
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "gamma", "f_hat", "tau_hat", "p_hat", "fold"])?;
        for i in 0..self.n() {
            w.write_record([
                i.to_string(),
                fmt_f64(self.gamma[i]),
                fmt_f64(self.f_hat[i]),
                fmt_f64(self.tau_hat[i]),
                fmt_f64(self.p_hat[i]),
                self.folds.fold_of[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nuisance columns read back from a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceTable {
    pub f_hat: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub fold: Vec<usize>,
}

/// Reads the `unit,gamma,f_hat,tau_hat,p_hat,fold` layout written by
/// [`AipwScoreSet::write_csv`]. Units must appear in order.
pub fn read_nuisances<R: std::io::Read>(reader: R) -> Result<NuisanceTable> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    struct Row {
        unit: usize,
        gamma: f64,
        f_hat: f64,
        tau_hat: f64,
        p_hat: f64,
        fold: usize,
    }
    let mut out = NuisanceTable { f_hat: vec![], tau_hat: vec![], p_hat: vec![], fold: vec![] };
    for (i, row) in csv::Reader::from_reader(reader).deserialize::<Row>().enumerate() {
        let row = row?;
        if row.unit != i {
            return Err(Error::InvalidData(format!("score rows out of order at line {}", i + 2)));
        }
        out.f_hat.push(row.f_hat);
        out.tau_hat.push(row.tau_hat);
        out.p_hat.push(row.p_hat);
        out.fold.push(row.fold);
    }
    if out.f_hat.is_empty() {
        return Err(Error::InvalidData("empty score file".into()));
    }
    Ok(out)
}

/// Nuisance estimates on the training complement of one fold, produced by the
/// same models that scored the fold. Units in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementFit {
    pub units: Vec<usize>,
    /// Out-of-bag for complement controls, plain prediction for treated units.
    pub f_hat: Vec<f64>,
    /// Out-of-bag causal forest estimates.
    pub tau_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
}

/// Output of [`crossfit_nuisances`].
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub scores: AipwScoreSet,
    pub complement: Vec<ComplementFit>,
}

struct FoldFit {
    members: Vec<usize>,
    f_hat: Vec<f64>,
    tau_hat: Vec<f64>,
    p_hat: Vec<f64>,
    complement: ComplementFit,
}

/// Propensities on `fit_units` and `eval_units` from a logistic regression of
/// treatment on covariates fitted on `fit_units`.
fn logistic_propensity(data: &Dataset, fit_units: &[usize], eval_units: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut design = LogitDesign::new(fit_units.len());
    for j in 0..data.d() {
        design.push(format!("x{j}"), fit_units.iter().map(|&i| data.covariates.get(i, j)).collect());
    }
    let t: Vec<f64> = fit_units.iter().map(|&i| f64::from(data.treatment[i])).collect();
    let fit = fit_logistic(&design, &t, None)?;
    let predict = |units: &[usize]| units.iter().map(|&i| fit.predict(data.covariates.row(i))).collect();
    Ok((predict(fit_units), predict(eval_units)))
}

fn fit_fold(data: &Dataset, folds: &FoldAssignment, params: &NuisanceParams, mode: PropensityMode, k: usize) -> Result<FoldFit> {
    let members = folds.members(k);
    let complement = folds.complement(k);
    let arms = complement.iter().filter(|&&i| data.is_treated(i)).count();
    if arms == 0 || arms == complement.len() {
        return Err(Error::SingleArm(format!("training complement of fold {k} has a single arm")));
    }
    let (baseline_params, causal_params) = params.for_fold(k);

    let controls: Vec<usize> = complement.iter().copied().filter(|&i| !data.is_treated(i)).collect();
    let baseline = fit_regression_forest(data, Target::Outcome, Some(&controls), &baseline_params)?;
    let f_fold = baseline.predict_all(&data.covariates.select_rows(&members))?;
    let control_oob = baseline.oob_predictions()?;
    let mut f_comp = Vec::with_capacity(complement.len());
    let mut next_control = 0;
    for &i in &complement {
        if data.is_treated(i) {
            f_comp.push(baseline.predict(data.covariates.row(i))?);
        } else {
            f_comp.push(control_oob[next_control]);
            next_control += 1;
        }
    }

    let (p_comp, p_fold) = match mode {
        PropensityMode::KnownConstantPerBatch => (
            complement.iter().map(|&i| data.unit_propensity(i)).collect(),
            members.iter().map(|&i| data.unit_propensity(i)).collect(),
        ),
        PropensityMode::Estimated => logistic_propensity(data, &complement, &members)?,
    };
    let p_comp: Vec<f64> = p_comp.into_iter().map(|p: f64| p.clamp(PROPENSITY_MIN, PROPENSITY_MAX)).collect();

    let causal = fit_causal_forest(data, Some(&complement), &causal_params, &Propensity::Known(p_comp.clone()))?;
    let tau_fold = causal.predict_all(&data.covariates.select_rows(&members))?;
    let tau_comp = causal.oob_estimates()?;

    Ok(FoldFit {
        members,
        f_hat: f_fold,
        tau_hat: tau_fold,
        p_hat: p_fold,
        complement: ComplementFit { units: complement, f_hat: f_comp, tau_hat: tau_comp, p_hat: p_comp },
    })
}

/// Cross-fitted nuisances and AIPW scores.
///
/// For each fold, a baseline forest on the control units of the other folds
/// gives `f_hat`, a causal forest on the other folds gives `tau_hat`, and the
/// propensity is the batch design value or a logistic fit on the other folds.
pub fn crossfit_nuisances(
    data: &Dataset,
    folds: &FoldAssignment,
    params: &NuisanceParams,
    mode: PropensityMode,
) -> Result<CrossFit> {
    data.validate()?;
    if folds.n != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: folds.n });
    }
    data.require_both_arms()?;
    let fits: Vec<FoldFit> = map_indexed(folds.k, |k| fit_fold(data, folds, params, mode, k))
        .into_iter()
        .collect::<Result<_>>()?;
    let n = data.n();
    let (mut f_hat, mut tau_hat, mut p_hat) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut complement = Vec::with_capacity(folds.k);
    for fit in fits {
        for (pos, &i) in fit.members.iter().enumerate() {
            f_hat[i] = fit.f_hat[pos];
            tau_hat[i] = fit.tau_hat[pos];
            p_hat[i] = fit.p_hat[pos];
        }
        complement.push(fit.complement);
    }
    let scores = AipwScoreSet::from_nuisances(data, f_hat, tau_hat, p_hat, folds.clone(), mode)?;
    Ok(CrossFit { scores, complement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_synthetic, BaselineSpec, BatchSpec, CovariateLaw, DgpConfig, EffectSpec};
    use crate::folds::make_folds;
    use crate::forest::ForestModel;

    fn toy() -> Dataset {
        let x = crate::Covariates::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        Dataset::new(x, vec![1, 0, 1, 0], vec![1, 1, 0, 0], vec![0; 4], vec![0.5]).unwrap()
    }

    #[test]
    fn partial_blocks_keep_role_defaults() {
        let p: NuisanceParams = serde_json::from_str(r#"{"causal": {"n_trees": 7}}"#).unwrap();
        assert_eq!(p.causal.n_trees, 7);
        assert_eq!(p.causal.min_node_size, ForestParams::causal_default().min_node_size);
        assert_eq!(p.baseline, ForestParams::default());
        assert!(serde_json::from_str::<NuisanceParams>(r#"{"causal": {"n_treez": 7}}"#).is_err());
    }

    #[test]
    fn zero_nuisances_reduce_to_ipw() {
        let data = toy();
        let folds = FoldAssignment::from_assignment(vec![0, 0, 1, 1], 2).unwrap();
        let s = AipwScoreSet::from_nuisances(&data, vec![0.0; 4], vec![0.0; 4], vec![0.5; 4], folds, PropensityMode::KnownConstantPerBatch)
            .unwrap();
        assert_eq!(s.gamma, vec![2.0, -2.0, 0.0, 0.0]);
        assert_eq!(s.clip_count, 0);
    }

    #[test]
    fn exact_nuisances_give_tau() {
        // y equals f_t for every unit, so the residual term vanishes
        let data = toy();
        let (p, tau) = (0.5, 0.4);
        let f: Vec<f64> = (0..4)
            .map(|i| if data.is_treated(i) { data.y(i) - (1.0 - p) * tau } else { data.y(i) + p * tau })
            .collect();
        let folds = FoldAssignment::from_assignment(vec![0, 1, 0, 1], 2).unwrap();
        let s = AipwScoreSet::from_nuisances(&data, f, vec![tau; 4], vec![p; 4], folds, PropensityMode::Estimated).unwrap();
        for g in &s.gamma {
            assert!((g - tau).abs() < 1e-15);
        }
    }

    #[test]
    fn propensities_are_clipped_and_counted() {
        let data = toy();
        let folds = FoldAssignment::from_assignment(vec![0, 1, 0, 1], 2).unwrap();
        let s = AipwScoreSet::from_nuisances(&data, vec![0.0; 4], vec![0.0; 4], vec![0.001, 0.5, 0.999, 0.3], folds, PropensityMode::Estimated)
            .unwrap();
        assert_eq!(s.clip_count, 2);
        assert_eq!(s.p_hat, vec![0.01, 0.5, 0.99, 0.3]);
    }

    #[test]
    fn csv_round_trip() {
        let data = toy();
        let folds = FoldAssignment::from_assignment(vec![0, 1, 0, 1], 2).unwrap();
        let s = AipwScoreSet::from_nuisances(&data, vec![0.1; 4], vec![0.2; 4], vec![0.5; 4], folds, PropensityMode::Estimated).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("unit,gamma,f_hat,tau_hat,p_hat,fold\n"));
        let t = read_nuisances(&buf[..]).unwrap();
        assert_eq!(t.f_hat, s.f_hat);
        assert_eq!(t.tau_hat, s.tau_hat);
        assert_eq!(t.fold, s.folds.fold_of);
    }

    fn small_trial(seed: u64) -> Dataset {
        generate_synthetic(&DgpConfig {
            n_units: 240,
            n_covariates: 2,
            covariate_law: CovariateLaw::Uniform01,
            baseline_spec: BaselineSpec::Linear { intercept: -0.5, coefficients: vec![1.0, 0.0] },
            effect_spec: EffectSpec::LinearInOneCovariate { intercept: 0.2, feature: 1, slope: 0.6 },
            batches: vec![
                BatchSpec { size_fraction: 0.5, treat_propensity: 0.6 },
                BatchSpec { size_fraction: 0.5, treat_propensity: 0.4 },
            ],
            aux_flag: None,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn nuisances_come_from_models_without_the_fold() {
        let data = small_trial(5);
        let folds = make_folds(data.n(), 3, 11).unwrap();
        let params = NuisanceParams::default().with_trees(30).with_seed(2);
        let fit = crossfit_nuisances(&data, &folds, &params, PropensityMode::KnownConstantPerBatch).unwrap();
        for k in 0..3 {
            let (bp, cp) = params.for_fold(k);
            let comp = folds.complement(k);
            let controls: Vec<usize> = comp.iter().copied().filter(|&i| !data.is_treated(i)).collect();
            let x = data.covariates.select_rows(&controls);
            let y: Vec<f64> = controls.iter().map(|&i| data.y(i)).collect();
            let baseline = ForestModel::fit_regression(&x, &y, &bp).unwrap();
            let xc = data.covariates.select_rows(&comp);
            let yc: Vec<f64> = comp.iter().map(|&i| data.y(i)).collect();
            let tc: Vec<bool> = comp.iter().map(|&i| data.is_treated(i)).collect();
            let pc: Vec<f64> = comp.iter().map(|&i| data.unit_propensity(i)).collect();
            let causal = ForestModel::fit_causal(&xc, &yc, &tc, &Propensity::Known(pc), &cp).unwrap();
            for i in folds.members(k) {
                assert_eq!(fit.scores.f_hat[i], baseline.predict(data.covariates.row(i)).unwrap());
                assert_eq!(fit.scores.tau_hat[i], causal.predict_cate(data.covariates.row(i)).unwrap());
                assert_eq!(fit.scores.p_hat[i], data.unit_propensity(i));
            }
            assert_eq!(fit.complement[k].units, comp);
            assert_eq!(fit.complement[k].tau_hat, causal.oob_estimates().unwrap());
        }
    }

    #[test]
    fn estimated_mode_uses_logistic_propensity() {
        let data = small_trial(6);
        let folds = make_folds(data.n(), 2, 1).unwrap();
        let params = NuisanceParams::default().with_trees(30);
        let fit = crossfit_nuisances(&data, &folds, &params, PropensityMode::Estimated).unwrap();
        assert!(fit.scores.p_hat.iter().all(|&p| p > 0.2 && p < 0.8));
        assert!(fit.scores.gamma.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn single_arm_complement_is_an_error() {
        let x = crate::Covariates::new(40, 1, (0..40).map(f64::from).collect()).unwrap();
        let t: Vec<u8> = (0..40).map(|i| u8::from(i < 20)).collect();
        let data = Dataset::new(x, t, vec![0; 40], vec![0; 40], vec![0.5]).unwrap();
        let folds = FoldAssignment::from_assignment((0..40).map(|i| usize::from(i < 20)).collect(), 2).unwrap();
        let err = crossfit_nuisances(&data, &folds, &NuisanceParams::default().with_trees(2), PropensityMode::KnownConstantPerBatch);
        assert!(matches!(err, Err(Error::SingleArm(_))));
    }
}
