//! Policy-value curves against the random-allocation benchmark.

use serde::Serialize;

use crate::aipw::AipwScoreSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::io::fmt_f64;
use crate::stats::rank_descending;

use super::policy::{PolicyName, ScoringPolicy};

/// `{0, 0.05, ..., 0.95, 1}`.
pub fn default_q_grid() -> Vec<f64> {
    (0..=20).map(|j| j as f64 / 20.0).collect()
}

pub fn validate_q_grid(q_grid: &[f64]) -> Result<()> {
    if q_grid.is_empty() {
        return Err(Error::config("q_grid", "must not be empty"));
    }
    if let Some(q) = q_grid.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::config("q_grid", format!("{q} is outside [0, 1]")));
    }
    Ok(())
}

/// Treatment indicators for fold `members` when the top `round(q n_k)` units
/// by score are treated. Ties go to the lower unit index.
pub fn fold_assignment(score: &[f64], members: &[usize], q: f64) -> Vec<bool> {
    let local: Vec<f64> = members.iter().map(|&i| score[i]).collect();
    let m = (q * members.len() as f64).round() as usize;
    let mut pi = vec![false; members.len()];
    for &r in rank_descending(&local).iter().take(m) {
        pi[r] = true;
    }
    pi
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCurve {
    pub policy: PolicyName,
    pub q_grid: Vec<f64>,
    pub value: Vec<f64>,
    pub value_random: Vec<f64>,
    pub delta_vs_random: Vec<f64>,
    pub se_delta: Vec<f64>,
    /// `per_fold_values[k][j]`: fold `k` estimate at `q_grid[j]`.
    pub per_fold_values: Vec<Vec<f64>>,
    /// Per-fold control-arm mean estimates.
    pub control_mean: Vec<f64>,
    /// Per-fold mean AIPW score.
    pub mean_gamma: Vec<f64>,
}

fn check_inputs(score: &[f64], scores: &AipwScoreSet, q_grid: &[f64]) -> Result<()> {
    validate_q_grid(q_grid)?;
    if score.len() != scores.n() {
        return Err(Error::DimensionMismatch { expected: scores.n(), got: score.len() });
    }
    if scores.folds.sizes().contains(&0) {
        return Err(Error::InsufficientData("empty fold".into()));
    }
    Ok(())
}

/// AIPW policy-value curve.
///
/// Within fold `k` with `n_k` units, the random benchmark is
/// `U(q) = control_mean + q * mean(gamma)`, the policy gain is
/// `D(q) = sum((pi - q) gamma) / n_k` and its SE is
/// `sqrt(sum(((pi - q) gamma - D)^2)) / n_k`. Estimates are averaged over
/// folds; variances combine with weights `(n_k / n)^2`.
pub fn policy_value_curve(policy: &ScoringPolicy, scores: &AipwScoreSet, q_grid: &[f64]) -> Result<PolicyCurve> {
    check_inputs(&policy.score, scores, q_grid)?;
    let folds = &scores.folds;
    let n = scores.n() as f64;
    let nq = q_grid.len();
    let mut per_fold_values = Vec::with_capacity(folds.k);
    let mut per_fold_random = Vec::with_capacity(folds.k);
    let mut control_mean = Vec::with_capacity(folds.k);
    let mut mean_gamma = Vec::with_capacity(folds.k);
    let mut var = vec![0.0; nq];
    for k in 0..folds.k {
        let members = folds.members(k);
        let nk = members.len() as f64;
        let c = members.iter().map(|&i| scores.gamma_control[i]).sum::<f64>() / nk;
        let g = members.iter().map(|&i| scores.gamma[i]).sum::<f64>() / nk;
        let mut values = Vec::with_capacity(nq);
        let mut randoms = Vec::with_capacity(nq);
        for (j, &q) in q_grid.iter().enumerate() {
            let pi = fold_assignment(&policy.score, &members, q);
            let terms: Vec<f64> = members
                .iter()
                .zip(&pi)
                .map(|(&i, &p)| (f64::from(u8::from(p)) - q) * scores.gamma[i])
                .collect();
            let delta = terms.iter().sum::<f64>() / nk;
            let ss: f64 = terms.iter().map(|t| (t - delta).powi(2)).sum();
            let random = c + q * g;
            randoms.push(random);
            values.push(random + delta);
            var[j] += (nk / n).powi(2) * ss / (nk * nk);
        }
        per_fold_values.push(values);
        per_fold_random.push(randoms);
        control_mean.push(c);
        mean_gamma.push(g);
    }
    let k = folds.k as f64;
    let avg = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / k;
    let value: Vec<f64> = (0..nq).map(|j| avg(&per_fold_values, j)).collect();
    let value_random: Vec<f64> = (0..nq).map(|j| avg(&per_fold_random, j)).collect();
    let delta_vs_random = value.iter().zip(&value_random).map(|(v, r)| v - r).collect();
    Ok(PolicyCurve {
        policy: policy.name,
        q_grid: q_grid.to_vec(),
        value,
        value_random,
        delta_vs_random,
        se_delta: var.into_iter().map(f64::sqrt).collect(),
        per_fold_values,
        control_mean,
        mean_gamma,
    })
}

/// Difference-in-means value of assigning treatment by `pi` to `units`:
/// treated outcomes of assigned units over the treated count plus control
/// outcomes of unassigned units over the control count.
pub fn simple_difference(data: &Dataset, units: &[usize], pi: &[bool]) -> Result<f64> {
    let (mut n1, mut n0, mut s1, mut s0) = (0usize, 0usize, 0.0, 0.0);
    for (&i, &p) in units.iter().zip(pi) {
        if data.is_treated(i) {
            n1 += 1;
            if p {
                s1 += data.y(i);
            }
        } else {
            n0 += 1;
            if !p {
                s0 += data.y(i);
            }
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::SingleArm("simple difference needs both arms".into()));
    }
    Ok(s1 / n1 as f64 + s0 / n0 as f64)
}

/// Simple-difference policy value at `q`, by fold and averaged over folds.
pub fn simple_difference_value(policy: &ScoringPolicy, data: &Dataset, folds: &FoldAssignment, q: f64) -> Result<f64> {
    validate_q_grid(&[q])?;
    let mut total = 0.0;
    for k in 0..folds.k {
        let members = folds.members(k);
        total += simple_difference(data, &members, &fold_assignment(&policy.score, &members, q))?;
    }
    Ok(total / folds.k as f64)
}

/// Writes `policy,q,value,delta,se` rows for every curve.
pub fn write_curves_csv<W: std::io::Write>(curves: &[PolicyCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["policy", "q", "value", "delta", "se"])?;
    for c in curves {
        for j in 0..c.q_grid.len() {
            w.write_record([
                c.policy.as_str(),
                &fmt_f64(c.q_grid[j]),
                &fmt_f64(c.value[j]),
                &fmt_f64(c.delta_vs_random[j]),
                &fmt_f64(c.se_delta[j]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
