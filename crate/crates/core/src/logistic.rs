//! Logistic regression by iteratively reweighted least squares.
//!
//! Newton steps are damped by step-halving whenever the log-likelihood would
//! decrease, and a `1e-8` ridge is added to the information matrix so that
//! nearly singular designs still produce a step. Exactly collinear designs are
//! rejected up front.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::link::{expit, LOGIT_EPS};

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
const RIDGE: f64 = 1e-8;
const SEPARATION_ETA: f64 = 30.0;

/// Column-major design matrix with named columns. The intercept is added by
/// [`fit_logistic`] and is not stored here.
#[derive(Debug, Clone, Default)]
pub struct LogitDesign {
    n: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl LogitDesign {
    pub fn new(n: usize) -> Self {
        LogitDesign { n, names: Vec::new(), columns: Vec::new() }
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.push(name, values);
        self
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.n, "design column length must match the design");
        self.names.push(name.into());
        self.columns.push(values);
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    fn row_with_intercept(&self, i: usize, out: &mut [f64]) {
        out[0] = 1.0;
        for (j, c) in self.columns.iter().enumerate() {
            out[j + 1] = c[i];
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogitFit {
    /// Coefficient names, starting with `intercept`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// True when fitted probabilities saturate (perfect or quasi separation).
    pub separated: bool,
    /// Inverse observed information at the final iterate.
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: Vec<f64>,
    pub gradient_norm: f64,
}

impl LogitFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len()).map(|j| self.covariance[j][j].max(0.0).sqrt()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }

    /// Linear predictor for a feature row given without the intercept.
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len() + 1, self.coefficients.len());
        self.coefficients[0] + self.coefficients[1..].iter().zip(features).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Fitted probability, clipped into `[LOGIT_EPS, 1 - LOGIT_EPS]`.
    pub fn predict(&self, features: &[f64]) -> f64 {
        expit(self.linear_predictor(features)).clamp(LOGIT_EPS, 1.0 - LOGIT_EPS)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_rank(design: &LogitDesign, names: &[String]) -> Result<()> {
    let n = design.n;
    let m = design.n_features() + 1;
    let mut x = DMatrix::<f64>::zeros(n, m);
    let mut row = vec![0.0; m];
    for i in 0..n {
        design.row_with_intercept(i, &mut row);
        for j in 0..m {
            x[(i, j)] = row[j];
        }
    }
    let norms: Vec<f64> = (0..m).map(|j| x.column(j).norm()).collect();
    let r = x.qr().r();
    for j in 0..m {
        if norms[j] == 0.0 || r[(j, j)].abs() <= 1e-10 * norms[j] {
            return Err(Error::RankDeficient { column: j, name: names[j].clone() });
        }
    }
    Ok(())
}

/// Fits `P(y = 1 | x) = expit(b0 + x'b)` by IRLS.
///
/// Non-convergence within [`MAX_ITERATIONS`] is reported through
/// [`LogitFit::converged`] rather than as an error.
pub fn fit_logistic(design: &LogitDesign, y: &[f64], sample_weights: Option<&[f64]>) -> Result<LogitFit> {
    let n = design.n;
    let m = design.n_features() + 1;
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if let Some(w) = sample_weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.len() });
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData("sample weights must be finite and nonnegative".into()));
        }
    }
    if n <= m {
        return Err(Error::InsufficientData(format!("{n} rows for {m} coefficients")));
    }
    if design.columns.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite entry in logistic design".into()));
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(design.names.iter().cloned());
    check_rank(design, &names)?;

    let weight = |i: usize| sample_weights.map_or(1.0, |w| w[i]);
    let mut rows = vec![0.0; n * m];
    for i in 0..n {
        design.row_with_intercept(i, &mut rows[i * m..(i + 1) * m]);
    }
    let eta_of = |beta: &DVector<f64>, i: usize| -> f64 {
        rows[i * m..(i + 1) * m].iter().zip(beta.iter()).map(|(x, b)| x * b).sum()
    };
    let loglik = |beta: &DVector<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let eta = eta_of(beta, i);
                weight(i) * (y[i] * eta - softplus(eta))
            })
            .sum()
    };
    // gradient and information at beta
    let derivatives = |beta: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::<f64>::zeros(m);
        let mut h = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            let x = &rows[i * m..(i + 1) * m];
            let mu = expit(eta_of(beta, i));
            let w = weight(i);
            let r = w * (y[i] - mu);
            let v = w * mu * (1.0 - mu);
            for a in 0..m {
                g[a] += x[a] * r;
                for b in 0..=a {
                    h[(a, b)] += v * x[a] * x[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        (g, h)
    };

    let mut beta = DVector::<f64>::zeros(m);
    let mut ll = loglik(&beta);
    let mut trace = vec![ll];
    let (mut grad, mut info) = derivatives(&beta);
    let mut iterations = 0;
    let mut converged = grad.amax() < GRADIENT_TOLERANCE;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut regularized = info.clone();
        for a in 0..m {
            regularized[(a, a)] += RIDGE;
        }
        let step = match regularized.cholesky() {
            Some(c) => c.solve(&grad),
            None => break,
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &beta + &step * scale;
            let cand_ll = loglik(&candidate);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-10 {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(ll);
        let d = derivatives(&beta);
        grad = d.0;
        info = d.1;
        converged = grad.amax() < GRADIENT_TOLERANCE;
    }

    let separated = (0..n).any(|i| eta_of(&beta, i).abs() > SEPARATION_ETA);
    let mut regularized = info;
    for a in 0..m {
        regularized[(a, a)] += RIDGE;
    }
    let cov = regularized
        .try_inverse()
        .map(|c| 0.5 * (&c + c.transpose()))
        .unwrap_or_else(|| DMatrix::from_element(m, m, f64::NAN));
    Ok(LogitFit {
        names,
        coefficients: beta.iter().copied().collect(),
        converged: converged && !separated,
        iterations,
        separated,
        covariance: (0..m).map(|a| (0..m).map(|b| cov[(a, b)]).collect()).collect(),
        log_likelihood: trace,
        gradient_norm: grad.amax(),
    })
}
