//! Trial data: covariates, binary treatment and outcome, batch membership.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major covariate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Covariates {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at row {}, column {}",
                pos / d.max(1),
                pos % d.max(1)
            )));
        }
        Ok(Covariates { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::InvalidData(format!("row {i} has {} columns, expected {d}", r.len())));
            }
            values.extend_from_slice(r);
        }
        Covariates::new(rows.len(), d, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// Sub-matrix of the given rows, in the order listed.
    pub fn select_rows(&self, rows: &[usize]) -> Covariates {
        let mut values = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Covariates { n: rows.len(), d: self.d, values }
    }
}

/// Ground-truth potential-outcome probabilities for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// `P(Y(0) = 1 | x)` per unit.
    pub baseline: Vec<f64>,
    /// `P(Y(1) = 1 | x) - P(Y(0) = 1 | x)` per unit.
    pub cate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariates: Covariates,
    pub treatment: Vec<u8>,
    pub outcome: Vec<u8>,
    pub batch: Vec<u32>,
    /// Design treatment probability, indexed by batch id.
    pub design_propensity: Vec<f64>,
    /// Optional auxiliary binary label (e.g. a predicted-enrollment flag).
    pub flag: Option<Vec<u8>>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(
        covariates: Covariates,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        batch: Vec<u32>,
        design_propensity: Vec<f64>,
    ) -> Result<Self> {
        let data = Dataset { covariates, treatment, outcome, batch, design_propensity, flag: None, truth: None };
        data.validate()?;
        Ok(data)
    }

    pub fn with_flag(mut self, flag: Vec<u8>) -> Result<Self> {
        self.flag = Some(flag);
        self.validate()?;
        Ok(self)
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        self.truth = Some(truth);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.covariates.n_rows();
        for (name, len) in [
            ("treatment", self.treatment.len()),
            ("outcome", self.outcome.len()),
            ("batch", self.batch.len()),
        ] {
            if len != n {
                return Err(Error::InvalidData(format!("{name} has {len} entries for {n} rows")));
            }
        }
        if let Some(i) = self.treatment.iter().position(|&t| t > 1) {
            return Err(Error::InvalidData(format!("treatment at row {i} is not binary")));
        }
        if let Some(i) = self.outcome.iter().position(|&y| y > 1) {
            return Err(Error::InvalidData(format!("outcome at row {i} is not binary")));
        }
        if let Some(&b) = self.batch.iter().find(|&&b| b as usize >= self.design_propensity.len()) {
            return Err(Error::InvalidData(format!("batch id {b} has no design propensity")));
        }
        if let Some(p) = self.design_propensity.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::InvalidData(format!("design propensity {p} outside (0, 1)")));
        }
        if let Some(flag) = &self.flag {
            if flag.len() != n || flag.iter().any(|&f| f > 1) {
                return Err(Error::InvalidData("flag must be a binary column with one entry per row".into()));
            }
        }
        if let Some(truth) = &self.truth {
            if truth.baseline.len() != n || truth.cate.len() != n {
                return Err(Error::InvalidData("truth columns must have one entry per row".into()));
            }
            for i in 0..n {
                let f = truth.baseline[i];
                let f1 = f + truth.cate[i];
                if !(0.0..=1.0).contains(&f) || !(-1e-12..=1.0 + 1e-12).contains(&f1) {
                    return Err(Error::InvalidData(format!("truth at row {i} is not a probability pair")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.covariates.n_rows()
    }

    pub fn d(&self) -> usize {
        self.covariates.n_cols()
    }

    pub fn y(&self, i: usize) -> f64 {
        f64::from(self.outcome[i])
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treatment[i] == 1
    }

    pub fn unit_propensity(&self, i: usize) -> f64 {
        self.design_propensity[self.batch[i] as usize]
    }

    pub fn n_batches(&self) -> usize {
        self.design_propensity.len()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1).count()
    }

    pub fn require_both_arms(&self) -> Result<()> {
        let nt = self.n_treated();
        if nt == 0 || nt == self.n() {
            return Err(Error::SingleArm(format!("{nt} of {} units treated", self.n())));
        }
        Ok(())
    }

    /// Mean outcome among control units of `units`.
    pub fn control_mean(&self, units: &[usize]) -> Result<f64> {
        let (s, c) = units
            .iter()
            .filter(|&&i| !self.is_treated(i))
            .fold((0.0, 0usize), |(s, c), &i| (s + self.y(i), c + 1));
        if c == 0 {
            return Err(Error::SingleArm("no control units".into()));
        }
        Ok(s / c as f64)
    }

    /// Replaces design propensities by the empirical treated share of each batch.
    pub fn empirical_propensities(&self) -> Vec<f64> {
        let nb = self.batch.iter().map(|&b| b as usize + 1).max().unwrap_or(1);
        let mut treated = vec![0usize; nb];
        let mut total = vec![0usize; nb];
        for i in 0..self.n() {
            let b = self.batch[i] as usize;
            total[b] += 1;
            treated[b] += usize::from(self.treatment[i]);
        }
        treated.iter().zip(&total).map(|(&t, &n)| if n == 0 { 0.5 } else { t as f64 / n as f64 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let x = Covariates::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        Dataset::new(x, vec![1, 0, 1, 0], vec![1, 0, 0, 1], vec![0, 0, 0, 0], vec![0.5]).unwrap()
    }

    #[test]
    fn rejects_non_binary_outcome() {
        let x = Covariates::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(Dataset::new(x, vec![1, 0], vec![2, 0], vec![0, 0], vec![0.5]).is_err());
    }

    #[test]
    fn rejects_unknown_batch() {
        let x = Covariates::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(Dataset::new(x, vec![1, 0], vec![1, 0], vec![0, 1], vec![0.5]).is_err());
    }

    #[test]
    fn rejects_non_finite_covariates() {
        assert!(Covariates::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn control_mean_and_arms() {
        let d = toy();
        assert_eq!(d.control_mean(&[0, 1, 2, 3]).unwrap(), 0.5);
        d.require_both_arms().unwrap();
        assert_eq!(d.empirical_propensities(), vec![0.5]);
    }

    #[test]
    fn truth_must_be_probabilities() {
        let d = toy();
        let bad = Truth { baseline: vec![0.9; 4], cate: vec![0.2; 4] };
        assert!(d.with_truth(bad).is_err());
    }
}
