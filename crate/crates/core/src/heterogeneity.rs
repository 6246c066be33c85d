//! Diagnostics for estimated treatment-effect heterogeneity: calibration
//! slope, sorted group average effects (GATES) and group comparisons.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::aipw::AipwScoreSet;
use crate::ate::{score_mean, Estimate};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::stats::{p_value_one_sided, rank_descending};

/// The regression run within each fold.
pub const CALIBRATION_FORM: &str = "y ~ 1 + tau_hat + (t - p) * mean_tau + (t - p) * (tau_hat - mean_tau)";

/// Smallest GATES group allowed within a fold.
pub const MIN_GROUP_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub slope: f64,
    pub se: f64,
    pub p_value_one_sided: f64,
    /// Coefficient and SE of `(t - p) * mean_tau`, averaged over folds.
    pub mean_coefficient: Estimate,
    pub per_fold: Vec<Estimate>,
}

/// OLS coefficients with HC1 robust standard errors.
fn ols_hc1(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} rows for {k} regressors")));
    }
    let xtx = x.transpose() * x;
    let inv = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateScores("calibration design is singular".into()))?
        .inverse();
    let beta = &inv * (x.transpose() * y);
    let resid = y - x * &beta;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let row = x.row(i);
        meat += row.transpose() * row * (resid[i] * resid[i]);
    }
    let cov = &inv * meat * &inv * (n as f64 / (n - k) as f64);
    let se = DVector::from_iterator(k, (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()));
    Ok((beta, se))
}

/// Per-fold calibration regression of the outcome on the centered treatment
/// interacted with the fold-mean and demeaned CATE estimates.
///
/// `share` fixes the centering constant `p`; `None` centers each unit at its
/// own propensity from `scores`. Fold slopes and SEs are aggregated by simple
/// means.
pub fn calibration_regression(data: &Dataset, scores: &AipwScoreSet, share: Option<f64>) -> Result<CalibrationResult> {
    if scores.n() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: scores.n() });
    }
    let folds = &scores.folds;
    let mut per_fold = Vec::with_capacity(folds.k);
    let mut mean_coef = Vec::with_capacity(folds.k);
    for k in 0..folds.k {
        let units = folds.members(k);
        let m = units.len();
        let tau: Vec<f64> = units.iter().map(|&i| scores.tau_hat[i]).collect();
        let tau_bar = tau.iter().sum::<f64>() / m as f64;
        let spread = tau.iter().map(|t| (t - tau_bar).abs()).fold(0.0, f64::max);
        if spread <= 1e-12 * tau_bar.abs().max(1.0) {
            return Err(Error::DegenerateScores(format!("constant CATE estimates in fold {k}")));
        }
        let mut x = DMatrix::<f64>::zeros(m, 4);
        let mut y = DVector::<f64>::zeros(m);
        for (r, &i) in units.iter().enumerate() {
            let p = share.unwrap_or(scores.p_hat[i]);
            let c = f64::from(data.treatment[i]) - p;
            x[(r, 0)] = 1.0;
            x[(r, 1)] = tau[r];
            x[(r, 2)] = c * tau_bar;
            x[(r, 3)] = c * (tau[r] - tau_bar);
            y[r] = data.y(i);
        }
        let (beta, se) = ols_hc1(&x, &y)?;
        per_fold.push(Estimate { estimate: beta[3], se: se[3] });
        mean_coef.push(Estimate { estimate: beta[2], se: se[2] });
    }
    let avg = |v: &[Estimate]| Estimate {
        estimate: v.iter().map(|e| e.estimate).sum::<f64>() / v.len() as f64,
        se: v.iter().map(|e| e.se).sum::<f64>() / v.len() as f64,
    };
    let agg = avg(&per_fold);
    Ok(CalibrationResult {
        slope: agg.estimate,
        se: agg.se,
        p_value_one_sided: p_value_one_sided(agg.estimate, agg.se),
        mean_coefficient: avg(&mean_coef),
        per_fold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseDifference {
    /// Higher group index.
    pub upper: usize,
    pub lower: usize,
    pub difference: f64,
    pub se: f64,
    pub p_value_one_sided: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatesResult {
    pub n_groups: usize,
    /// Group 0 holds the lowest CATE estimates.
    pub group_ate: Vec<Estimate>,
    /// Per fold, the smallest estimate in each group above the first.
    pub group_bounds: Vec<Vec<f64>>,
    /// Group index of every unit.
    pub group_of: Vec<usize>,
    pub pairwise: Vec<PairwiseDifference>,
}

/// Sorted group average treatment effects on within-fold quantile groups of
/// the cross-fitted CATE estimates. Ties are broken by unit index.
pub fn gates(scores: &AipwScoreSet, n_groups: usize) -> Result<GatesResult> {
    if n_groups == 0 {
        return Err(Error::config("n_groups", "must be at least 1"));
    }
    let folds = &scores.folds;
    let mut group_of = vec![0; scores.n()];
    let mut group_bounds = Vec::with_capacity(folds.k);
    for k in 0..folds.k {
        let mut units = folds.members(k);
        let m = units.len();
        if m < n_groups * MIN_GROUP_SIZE {
            return Err(Error::InsufficientData(format!(
                "fold {k} has {m} units, fewer than {MIN_GROUP_SIZE} per group for {n_groups} groups"
            )));
        }
        units.sort_by(|&a, &b| scores.tau_hat[a].total_cmp(&scores.tau_hat[b]).then(a.cmp(&b)));
        let mut bounds = Vec::with_capacity(n_groups.saturating_sub(1));
        for (rank, &i) in units.iter().enumerate() {
            let g = rank * n_groups / m;
            if g > bounds.len() {
                bounds.push(scores.tau_hat[i]);
            }
            group_of[i] = g;
        }
        group_bounds.push(bounds);
    }
    let group_ate: Vec<Estimate> =
        (0..n_groups).map(|g| score_mean(&scores.gamma, (0..scores.n()).filter(|&i| group_of[i] == g))).collect();
    let mut pairwise = Vec::new();
    for upper in 1..n_groups {
        for lower in 0..upper {
            let difference = group_ate[upper].estimate - group_ate[lower].estimate;
            let se = group_ate[upper].se.hypot(group_ate[lower].se);
            pairwise.push(PairwiseDifference {
                upper,
                lower,
                difference,
                se,
                p_value_one_sided: p_value_one_sided(difference, se),
            });
        }
    }
    Ok(GatesResult { n_groups, group_ate, group_bounds, group_of, pairwise })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupComparison {
    pub flag_on: Estimate,
    pub flag_off: Estimate,
    /// The units with the highest CATE estimates, as many as there are flagged units.
    pub cate_high: Estimate,
    pub cate_low: Estimate,
}

/// AIPW effects by a binary flag and by a CATE split of matching group sizes.
pub fn group_comparison(scores: &AipwScoreSet, flag: &[u8]) -> Result<GroupComparison> {
    let n = scores.n();
    if flag.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: flag.len() });
    }
    let m = flag.iter().filter(|&&f| f == 1).count();
    if m == 0 || m == n {
        return Err(Error::InvalidData("flag is constant".into()));
    }
    let mut high = vec![false; n];
    for &i in rank_descending(&scores.tau_hat).iter().take(m) {
        high[i] = true;
    }
    let g = &scores.gamma;
    Ok(GroupComparison {
        flag_on: score_mean(g, (0..n).filter(|&i| flag[i] == 1)),
        flag_off: score_mean(g, (0..n).filter(|&i| flag[i] != 1)),
        cate_high: score_mean(g, (0..n).filter(|&i| high[i])),
        cate_low: score_mean(g, (0..n).filter(|&i| !high[i])),
    })
}

/// `kind,group,estimate,se,p`: one row per group (numbered from 1, lowest
/// estimates first), then one row per pairwise difference such as `4-1`.
pub fn write_gates_csv<W: std::io::Write>(result: &GatesResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "group", "estimate", "se", "p"])?;
    for (g, e) in result.group_ate.iter().enumerate() {
        let p = p_value_one_sided(e.estimate, e.se);
        w.write_record(["group", &(g + 1).to_string(), &fmt_f64(e.estimate), &fmt_f64(e.se), &fmt_f64(p)])?;
    }
    for d in &result.pairwise {
        let label = format!("{}-{}", d.upper + 1, d.lower + 1);
        w.write_record(["pairwise", &label, &fmt_f64(d.difference), &fmt_f64(d.se), &fmt_f64(d.p_value_one_sided)])?;
    }
    w.flush()?;
    Ok(())
}

/// `fold,slope,se,p` per fold followed by the aggregate row `all`.
pub fn write_calibration_csv<W: std::io::Write>(result: &CalibrationResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fold", "slope", "se", "p"])?;
    for (k, e) in result.per_fold.iter().enumerate() {
        let p = p_value_one_sided(e.estimate, e.se);
        w.write_record([k.to_string(), fmt_f64(e.estimate), fmt_f64(e.se), fmt_f64(p)])?;
    }
    w.write_record(["all".into(), fmt_f64(result.slope), fmt_f64(result.se), fmt_f64(result.p_value_one_sided)])?;
    w.flush()?;
    Ok(())
}

/// `split,group,estimate,se`.
pub fn write_group_comparison_csv<W: std::io::Write>(result: &GroupComparison, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["split", "group", "estimate", "se"])?;
    for (split, group, e) in [
        ("flag", "1", result.flag_on),
        ("flag", "0", result.flag_off),
        ("cate", "high", result.cate_high),
        ("cate", "low", result.cate_low),
    ] {
        w.write_record([split, group, &fmt_f64(e.estimate), &fmt_f64(e.se)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aipw::PropensityMode;
    use crate::ate::ate_aipw;
    use crate::folds::make_folds;
    use crate::rng::stream_rng;
    use crate::Covariates;
    use rand::Rng;

    /// Randomized trial with p = 0.5 and the given per-unit true effects on a
    /// 0.3 baseline; nuisances are the truth.
    fn trial(tau: &[f64], tau_hat: Vec<f64>, seed: u64, k: usize) -> (Dataset, AipwScoreSet) {
        let n = tau.len();
        let mut rng = stream_rng(seed, 0);
        let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let y: Vec<u8> =
            (0..n).map(|i| u8::from(rng.random::<f64>() < 0.3 + tau[i] * f64::from(t[i]))).collect();
        let data = Dataset::new(Covariates::new(n, 1, vec![0.0; n]).unwrap(), t, y, vec![0; n], vec![0.5]).unwrap();
        let folds = make_folds(n, k, seed).unwrap();
        let f_hat: Vec<f64> = (0..n).map(|i| 0.3 + 0.5 * tau_hat[i]).collect();
        let s = AipwScoreSet::from_nuisances(&data, f_hat, tau_hat, vec![0.5; n], folds, PropensityMode::KnownConstantPerBatch)
            .unwrap();
        (data, s)
    }

    #[test]
    fn single_group_reproduces_ate_bit_exactly() {
        let tau: Vec<f64> = (0..400).map(|i| (i % 4) as f64 * 0.05).collect();
        let (_, s) = trial(&tau, tau.clone(), 1, 4);
        let g = gates(&s, 1).unwrap();
        assert_eq!(g.group_ate[0], ate_aipw(&s));
        assert!(g.pairwise.is_empty());
    }

    #[test]
    fn group_sizes_balanced_within_folds() {
        let tau: Vec<f64> = (0..1003).map(|i| ((i * 37) % 11) as f64 * 0.01).collect();
        let (_, s) = trial(&tau, tau.clone(), 2, 5);
        let g = gates(&s, 4).unwrap();
        for k in 0..5 {
            let mut counts = [0usize; 4];
            for i in s.folds.members(k) {
                counts[g.group_of[i]] += 1;
            }
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
        assert_eq!(g.pairwise.len(), 6);
        assert!(g.group_bounds.iter().all(|b| b.len() == 3));
    }

    #[test]
    fn injected_truth_recovers_four_levels() {
        // each group is compared with the mean true effect of its members;
        // a single group misses 2 SE with probability ~5%
        let levels = [0.0, 0.05, 0.10, 0.20];
        let tau: Vec<f64> = (0..8000).map(|i| levels[i % 4]).collect();
        let (mut hits, mut total) = (0, 0);
        for seed in 0..20 {
            let (_, s) = trial(&tau, tau.clone(), 100 + seed, 10);
            let g = gates(&s, 4).unwrap();
            for (grp, e) in g.group_ate.iter().enumerate() {
                let members: Vec<f64> = (0..tau.len()).filter(|&i| g.group_of[i] == grp).map(|i| tau[i]).collect();
                let truth = members.iter().sum::<f64>() / members.len() as f64;
                assert!((truth - levels[grp]).abs() < 0.01);
                hits += usize::from((e.estimate - truth).abs() < 2.0 * e.se);
                total += 1;
            }
        }
        assert!(hits as f64 / total as f64 >= 0.85, "{hits}/{total}");
    }

    #[test]
    fn small_groups_are_rejected() {
        let tau = vec![0.1; 150];
        let noise: Vec<f64> = (0..150).map(|i| i as f64).collect();
        let (_, s) = trial(&tau, noise, 4, 2);
        assert!(matches!(gates(&s, 4), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn calibration_rejects_constant_estimates() {
        let tau = vec![0.1; 200];
        let (data, s) = trial(&tau, tau.clone(), 5, 2);
        assert!(matches!(calibration_regression(&data, &s, Some(0.5)), Err(Error::DegenerateScores(_))));
    }

    #[test]
    fn calibration_slope_near_one_with_true_effects() {
        let tau: Vec<f64> = (0..20000).map(|i| (i % 5) as f64 * 0.1).collect();
        let (data, s) = trial(&tau, tau.clone(), 6, 5);
        let c = calibration_regression(&data, &s, Some(0.5)).unwrap();
        assert!((c.slope - 1.0).abs() < 2.5 * c.se, "{c:?}");
        let lo = c.per_fold.iter().map(|e| e.estimate).fold(f64::INFINITY, f64::min);
        let hi = c.per_fold.iter().map(|e| e.estimate).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= c.slope && c.slope <= hi);
        assert!((0.0..=1.0).contains(&c.p_value_one_sided));
    }

    #[test]
    fn calibration_slope_invariant_to_shift() {
        let tau: Vec<f64> = (0..2000).map(|i| (i % 7) as f64 * 0.04).collect();
        let (data, s) = trial(&tau, tau.clone(), 7, 4);
        let mut shifted = s.clone();
        shifted.tau_hat.iter_mut().for_each(|t| *t += 0.3);
        let a = calibration_regression(&data, &s, Some(0.5)).unwrap();
        let b = calibration_regression(&data, &shifted, Some(0.5)).unwrap();
        assert!((a.slope - b.slope).abs() < 1e-9);
        assert!((a.se - b.se).abs() < 1e-9);
    }

    #[test]
    fn comparison_partitions_coincide_for_threshold_flag() {
        let tau: Vec<f64> = (0..500).map(|i| ((i * 13) % 50) as f64 / 100.0).collect();
        let (_, s) = trial(&tau, tau.clone(), 8, 2);
        let flag: Vec<u8> = tau.iter().map(|&t| u8::from(t > 0.3)).collect();
        let c = group_comparison(&s, &flag).unwrap();
        assert_eq!(c.flag_on, c.cate_high);
        assert_eq!(c.flag_off, c.cate_low);
        assert!(group_comparison(&s, &[1; 500]).is_err());
    }

    #[test]
    fn csv_tables_have_expected_rows() {
        let tau: Vec<f64> = (0..400).map(|i| (i % 4) as f64 * 0.05).collect();
        let (data, s) = trial(&tau, tau.clone(), 9, 2);
        let mut buf = Vec::new();
        write_gates_csv(&gates(&s, 4).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 + 6);
        assert!(text.contains("pairwise,4-1,"));
        let mut buf = Vec::new();
        write_calibration_csv(&calibration_regression(&data, &s, None).unwrap(), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().last().unwrap().starts_with("all,"));
    }
}
