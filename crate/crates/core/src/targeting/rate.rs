//! Targeting operator characteristic (TOC) and its area (AUTOC).

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::aipw::AipwScoreSet;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{p_value_one_sided, rank_descending, sample_variance};

use super::curve::validate_q_grid;
use super::policy::{PolicyName, ScoringPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    /// Half-sample replicates for the standard error.
    pub replicates: usize,
    pub seed: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig { replicates: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateResult {
    pub policy: PolicyName,
    pub autoc: f64,
    pub se: f64,
    pub p_one_sided: f64,
    pub q_grid: Vec<f64>,
    pub toc_curve: Vec<f64>,
}

fn check(policy: &ScoringPolicy, scores: &AipwScoreSet) -> Result<()> {
    if policy.score.len() != scores.n() {
        return Err(Error::DimensionMismatch { expected: scores.n(), got: policy.score.len() });
    }
    let first = policy.score[0];
    if policy.score.iter().all(|&s| s == first) {
        return Err(Error::DegenerateScores(format!("{} scores are constant", policy.name)));
    }
    Ok(())
}

/// Prefix sums of scores in descending policy order over `units`.
fn ranked_prefix(score: &[f64], gamma: &[f64], units: &[usize]) -> Vec<f64> {
    let local: Vec<f64> = units.iter().map(|&i| score[i]).collect();
    let mut acc = 0.0;
    let mut prefix = Vec::with_capacity(units.len());
    for r in rank_descending(&local) {
        acc += gamma[units[r]];
        prefix.push(acc);
    }
    prefix
}

fn autoc_from_prefix(prefix: &[f64]) -> f64 {
    let n = prefix.len();
    let ate = prefix[n - 1] / n as f64;
    prefix.iter().enumerate().map(|(j, s)| s / (j + 1) as f64 - ate).sum::<f64>() / n as f64
}

/// TOC at each `q`: mean score of the top `max(1, round(q n))` units minus the
/// overall mean.
pub fn toc_curve(policy: &ScoringPolicy, scores: &AipwScoreSet, q_grid: &[f64]) -> Result<Vec<f64>> {
    check(policy, scores)?;
    validate_q_grid(q_grid)?;
    let n = scores.n();
    let units: Vec<usize> = (0..n).collect();
    let prefix = ranked_prefix(&policy.score, &scores.gamma, &units);
    let ate = prefix[n - 1] / n as f64;
    Ok(q_grid
        .iter()
        .map(|&q| {
            let m = ((q * n as f64).round() as usize).clamp(1, n);
            prefix[m - 1] / m as f64 - ate
        })
        .collect())
}

/// Rank weights `w_i = H_n - H_{i-1} - 1` (harmonic numbers, rank `i` from 1)
/// such that `AUTOC = sum(w_i gamma_(i)) / n`.
pub fn autoc_weights(n: usize) -> Vec<f64> {
    let h_n: f64 = (1..=n).map(|j| 1.0 / j as f64).sum();
    let mut h_prev = 0.0;
    (1..=n)
        .map(|i| {
            let w = h_n - h_prev - 1.0;
            h_prev += 1.0 / i as f64;
            w
        })
        .collect()
}

/// AUTOC over the per-rank grid `j / n`, with a half-sample bootstrap SE:
/// each replicate draws `n / 2` units without replacement and re-ranks them.
pub fn rate_autoc(policy: &ScoringPolicy, scores: &AipwScoreSet, q_grid: &[f64], config: &RateConfig) -> Result<RateResult> {
    check(policy, scores)?;
    if config.replicates < 2 {
        return Err(Error::config("rate.replicates", "need at least 2 replicates"));
    }
    let n = scores.n();
    let half = n / 2;
    if half < 2 {
        return Err(Error::InsufficientData(format!("{n} units for a half-sample bootstrap")));
    }
    let all: Vec<usize> = (0..n).collect();
    let autoc = autoc_from_prefix(&ranked_prefix(&policy.score, &scores.gamma, &all));
    let seed = derive_seed(config.seed, "rate.bootstrap", 0);
    let reps: Vec<f64> = (0..config.replicates)
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let mut units = sample(&mut rng, n, half).into_vec();
            units.sort_unstable();
            autoc_from_prefix(&ranked_prefix(&policy.score, &scores.gamma, &units))
        })
        .collect();
    let se = sample_variance(&reps).sqrt();
    Ok(RateResult {
        policy: policy.name,
        autoc,
        se,
        p_one_sided: p_value_one_sided(autoc, se),
        q_grid: q_grid.to_vec(),
        toc_curve: toc_curve(policy, scores, q_grid)?,
    })
}

/// `policy,autoc,se,p`.
pub fn write_rate_csv<W: std::io::Write>(results: &[RateResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["policy", "autoc", "se", "p"])?;
    for r in results {
        w.write_record([r.policy.as_str(), &fmt_f64(r.autoc), &fmt_f64(r.se), &fmt_f64(r.p_one_sided)])?;
    }
    w.flush()?;
    Ok(())
}

/// `policy,q,toc`.
pub fn write_toc_csv<W: std::io::Write>(results: &[RateResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["policy", "q", "toc"])?;
    for r in results {
        for (q, t) in r.q_grid.iter().zip(&r.toc_curve) {
            w.write_record([r.policy.as_str(), &fmt_f64(*q), &fmt_f64(*t)])?;
        }
    }
    w.flush()?;
    Ok(())
}
