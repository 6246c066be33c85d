//! Average treatment effect estimators.

use serde::Serialize;

use crate::aipw::AipwScoreSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

/// Difference of arm means within each batch, combined with batch-size
/// weights. The SE uses unpooled within-batch arm variances.
pub fn ate_mean_difference(data: &Dataset) -> Result<Estimate> {
    let n = data.n() as f64;
    let n_batches = data.batch.iter().map(|&b| b as usize + 1).max().unwrap_or(0);
    let (mut est, mut var) = (0.0, 0.0);
    for b in 0..n_batches {
        let mut arms: [Vec<f64>; 2] = [vec![], vec![]];
        for i in (0..data.n()).filter(|&i| data.batch[i] as usize == b) {
            arms[usize::from(data.treatment[i])].push(data.y(i));
        }
        let size = (arms[0].len() + arms[1].len()) as f64;
        if size == 0.0 {
            continue;
        }
        if arms[0].is_empty() || arms[1].is_empty() {
            return Err(Error::SingleArm(format!("batch {b} has an empty arm")));
        }
        let w = size / n;
        est += w * (mean(&arms[1]) - mean(&arms[0]));
        var += w * w * (sample_variance(&arms[1]) / arms[1].len() as f64 + sample_variance(&arms[0]) / arms[0].len() as f64);
    }
    Ok(Estimate { estimate: est, se: var.sqrt() })
}

/// Mean and standard error of the scores of `units`, with the 1/n variance.
pub(crate) fn score_mean(gamma: &[f64], units: impl Iterator<Item = usize> + Clone) -> Estimate {
    let (mut s, mut m) = (0.0, 0usize);
    for i in units.clone() {
        s += gamma[i];
        m += 1;
    }
    let est = s / m as f64;
    let ss: f64 = units.map(|i| (gamma[i] - est).powi(2)).sum();
    Estimate { estimate: est, se: (ss / m as f64).sqrt() / (m as f64).sqrt() }
}

/// Mean AIPW score with SE `sd / sqrt(n)`.
pub fn ate_aipw(scores: &AipwScoreSet) -> Estimate {
    score_mean(&scores.gamma, 0..scores.n())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::FoldAssignment;
    use crate::Covariates;

    fn dataset(t: Vec<u8>, y: Vec<u8>, batch: Vec<u32>, props: Vec<f64>) -> Dataset {
        let n = t.len();
        Dataset::new(Covariates::new(n, 1, vec![0.0; n]).unwrap(), t, y, batch, props).unwrap()
    }

    #[test]
    fn single_batch_difference() {
        // 100 treated with 43 successes, 100 controls with 37
        let t: Vec<u8> = (0..200).map(|i| u8::from(i < 100)).collect();
        let y: Vec<u8> = (0..200).map(|i| u8::from(if i < 100 { i < 43 } else { i < 137 })).collect();
        let e = ate_mean_difference(&dataset(t, y, vec![0; 200], vec![0.5])).unwrap();
        assert!((e.estimate - 0.06).abs() < 1e-12);
        let want = (0.43 * 0.57 / 99.0 + 0.37 * 0.63 / 99.0_f64).sqrt();
        assert!((e.se - want).abs() < 1e-12);
    }

    #[test]
    fn equal_batch_differences_combine_exactly() {
        // batch 0: 0.6 vs 0.5 over 10/10, batch 1: 0.3 vs 0.2 over 10/20
        let mut t = vec![];
        let mut y = vec![];
        let mut b = vec![];
        for i in 0..20 {
            t.push(u8::from(i < 10));
            y.push(u8::from(if i < 10 { i < 6 } else { i < 15 }));
            b.push(0);
        }
        for i in 0..30 {
            t.push(u8::from(i < 10));
            y.push(u8::from(if i < 10 { i < 3 } else { i < 14 }));
            b.push(1);
        }
        let e = ate_mean_difference(&dataset(t, y, b, vec![0.5, 0.33])).unwrap();
        assert!((e.estimate - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_arm_in_batch_is_an_error() {
        let e = ate_mean_difference(&dataset(vec![1, 0, 1, 1], vec![1, 0, 0, 1], vec![0, 0, 1, 1], vec![0.5, 0.5]));
        assert!(matches!(e, Err(Error::SingleArm(_))));
    }

    fn scores(gamma: Vec<f64>) -> AipwScoreSet {
        let n = gamma.len();
        AipwScoreSet {
            gamma_control: vec![0.0; n],
            f_hat: vec![0.0; n],
            tau_hat: vec![0.0; n],
            p_hat: vec![0.5; n],
            folds: FoldAssignment::from_assignment((0..n).map(|i| i % 2).collect(), 2).unwrap(),
            propensity_mode: crate::aipw::PropensityMode::KnownConstantPerBatch,
            clip_count: 0,
            gamma,
        }
    }

    #[test]
    fn constant_scores_have_zero_se() {
        let e = ate_aipw(&scores(vec![0.3; 6]));
        assert!((e.estimate - 0.3).abs() < 1e-15);
        assert!(e.se < 1e-15);
    }

    #[test]
    fn four_unit_hand_calculation() {
        // mean 0.5; deviations 1.5, -2.5, -0.5, 1.5 → variance 11/4; se = sqrt(11/4)/2
        let e = ate_aipw(&scores(vec![2.0, -2.0, 0.0, 2.0]));
        assert_eq!(e.estimate, 0.5);
        assert!((e.se - (11.0f64 / 4.0).sqrt() / 2.0).abs() < 1e-15);
    }
}
