//! Honest subsampled regression and causal forests.
//!
//! Each tree draws a subsample without replacement and splits it into a
//! structure half, which chooses the splits, and an estimation half, which
//! populates the leaves. Predictions are weighted averages over training
//! units, where unit `j` receives weight `1/|leaf|` from every tree whose
//! estimation leaf containing the query also contains `j`, averaged over trees.
//!
//! Causal trees split to maximize `n_L n_R (tau_L - tau_R)^2`, where the child
//! effects are inverse-propensity weighted differences in means of outcome
//! residuals `Y - E[Y | x]` (plain differences in means when the propensity is
//! constant within the node). Outcome residuals come from out-of-bag
//! predictions of an internal regression forest with doubled `min_node_size`.

mod tree;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::rng::{derive_seed, stream_rng};
use tree::{grow, GrowParams, Leaf, Tree, TrainingTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub subsample_fraction: f64,
    /// Share of each subsample used to populate leaves.
    pub honesty_fraction: f64,
    pub min_node_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 2000,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            min_node_size: 5,
            max_depth: None,
            mtry: None,
            seed: 0,
        }
    }
}

/// Reads a partial parameter block on top of `base`, so that omitted keys keep
/// the defaults of the block's role instead of the regression defaults.
pub(crate) fn deserialize_over<'de, D: serde::Deserializer<'de>>(
    base: ForestParams,
    deserializer: D,
) -> std::result::Result<ForestParams, D::Error> {
    use serde::de::Error as _;
    let patch = serde_json::Value::deserialize(deserializer)?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(D::Error::custom("forest parameters must be an object"));
    };
    let mut merged = match serde_json::to_value(base).map_err(D::Error::custom)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("ForestParams serializes to an object"),
    };
    merged.extend(patch);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(D::Error::custom)
}

pub(crate) fn deserialize_causal<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<ForestParams, D::Error> {
    deserialize_over(ForestParams::causal_default(), d)
}

impl ForestParams {
    /// Defaults for causal forests: 10 units per arm and leaf.
    pub fn causal_default() -> Self {
        ForestParams { min_node_size: 10, ..ForestParams::default() }
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn with_min_node_size(mut self, m: usize) -> Self {
        self.min_node_size = m;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_depth(mut self, depth: Option<usize>) -> Self {
        self.max_depth = depth;
        self
    }

    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("n_trees", "must be positive"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::config("subsample_fraction", format!("{} is not in (0, 1]", self.subsample_fraction)));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(Error::config("honesty_fraction", format!("{} is not in (0, 1)", self.honesty_fraction)));
        }
        if self.min_node_size == 0 {
            return Err(Error::config("min_node_size", "must be at least 1"));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > d {
                return Err(Error::config("mtry", format!("{m} is not in 1..={d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    Regression,
    Causal,
}

/// Treatment probabilities used by the causal split rule.
#[derive(Debug, Clone)]
pub enum Propensity {
    /// One known probability per training unit.
    Known(Vec<f64>),
    /// Estimate by an out-of-bag regression forest on the treatment.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Outcome,
    Treatment,
    Flag,
}

/// A fitted forest. Immutable after fitting.
#[derive(Debug, Clone, Serialize)]
pub struct ForestModel {
    pub kind: ForestKind,
    pub params: ForestParams,
    n_features: usize,
    trees: Vec<Tree>,
    /// Dataset unit of each local training index.
    pub training_units: Vec<usize>,
    #[serde(skip)]
    target: Vec<f64>,
    #[serde(skip)]
    treated: Vec<bool>,
    #[serde(skip)]
    rows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableImportance {
    pub counts: Vec<usize>,
    /// Counts divided by their total; all zeros when no tree has a split.
    pub normalized: Vec<f64>,
    pub has_splits: bool,
}

fn columns_of(features: &Covariates) -> Vec<Vec<f64>> {
    (0..features.n_cols()).map(|j| features.column(j)).collect()
}

fn row_major(features: &Covariates) -> Vec<f64> {
    (0..features.n_rows()).flat_map(|i| features.row(i).iter().copied()).collect()
}

fn grow_forest(
    columns: &[Vec<f64>],
    table: &TrainingTable<'_>,
    n: usize,
    params: &ForestParams,
) -> Vec<Tree> {
    let d = columns.len();
    let grow_params = GrowParams {
        min_node_size: params.min_node_size,
        max_depth: params.max_depth,
        mtry: params.resolved_mtry(d),
    };
    let s = ((n as f64 * params.subsample_fraction).round() as usize).clamp(2.min(n), n);
    let n_est = ((s as f64 * params.honesty_fraction).round() as usize).clamp(1, s.saturating_sub(1).max(1));
    let tree_seed = derive_seed(params.seed, "forest.tree", 0);
    map_indexed(params.n_trees, |b| {
        let mut rng = stream_rng(tree_seed, b as u64);
        let drawn = sample(&mut rng, n, s).into_vec();
        let mut estimation: Vec<u32> = drawn[..n_est].iter().map(|&i| i as u32).collect();
        let mut structure: Vec<u32> = drawn[n_est..].iter().map(|&i| i as u32).collect();
        estimation.sort_unstable();
        structure.sort_unstable();
        grow(table, &grow_params, structure, estimation, n, &mut rng)
    })
}

impl ForestModel {
    /// Regression forest of `target` on `features`.
    pub fn fit_regression(features: &Covariates, target: &[f64], params: &ForestParams) -> Result<ForestModel> {
        let n = features.n_rows();
        params.validate(features.n_cols())?;
        if target.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: target.len() });
        }
        if n < 2 * params.min_node_size {
            return Err(Error::InsufficientData(format!(
                "{n} units for min_node_size {}; need at least {}",
                params.min_node_size,
                2 * params.min_node_size
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite regression target".into()));
        }
        let columns = columns_of(features);
        let table = TrainingTable { columns: &columns, target, treated: None, residual: &[], arm_weight: &[] };
        let trees = grow_forest(&columns, &table, n, params);
        Ok(ForestModel {
            kind: ForestKind::Regression,
            params: params.clone(),
            n_features: features.n_cols(),
            trees,
            training_units: (0..n).collect(),
            target: target.to_vec(),
            treated: Vec::new(),
            rows: row_major(features),
        })
    }

    /// Causal forest of the effect of `treated` on `outcome`.
    pub fn fit_causal(
        features: &Covariates,
        outcome: &[f64],
        treated: &[bool],
        propensity: &Propensity,
        params: &ForestParams,
    ) -> Result<ForestModel> {
        let n = features.n_rows();
        params.validate(features.n_cols())?;
        if outcome.len() != n || treated.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: outcome.len().min(treated.len()) });
        }
        let n_treated = treated.iter().filter(|&&t| t).count();
        if n_treated == 0 || n_treated == n {
            return Err(Error::SingleArm(format!("{n_treated} of {n} training units treated")));
        }
        if n < 2 * params.min_node_size {
            return Err(Error::InsufficientData(format!("{n} units for min_node_size {}", params.min_node_size)));
        }
        let centering = ForestParams {
            min_node_size: 2 * params.min_node_size,
            seed: derive_seed(params.seed, "forest.center.y", 0),
            ..params.clone()
        };
        let centering = if n < 2 * centering.min_node_size {
            ForestParams { min_node_size: params.min_node_size, ..centering }
        } else {
            centering
        };
        let y_hat = ForestModel::fit_regression(features, outcome, &centering)?.oob_predictions()?;
        let p_hat = match propensity {
            Propensity::Known(p) => {
                if p.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: p.len() });
                }
                if p.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                    return Err(Error::InvalidData("known propensity outside (0, 1)".into()));
                }
                p.clone()
            }
            Propensity::Estimate => {
                let t: Vec<f64> = treated.iter().map(|&t| f64::from(u8::from(t))).collect();
                let p_params = ForestParams { seed: derive_seed(params.seed, "forest.center.t", 0), ..centering.clone() };
                ForestModel::fit_regression(features, &t, &p_params)?
                    .oob_predictions()?
                    .into_iter()
                    .map(|p| p.clamp(0.01, 0.99))
                    .collect()
            }
        };
        let residual: Vec<f64> = outcome.iter().zip(&y_hat).map(|(y, m)| y - m).collect();
        let arm_weight: Vec<f64> =
            treated.iter().zip(&p_hat).map(|(&t, &p)| if t { 1.0 / p } else { 1.0 / (1.0 - p) }).collect();
        let columns = columns_of(features);
        let table = TrainingTable {
            columns: &columns,
            target: outcome,
            treated: Some(treated),
            residual: &residual,
            arm_weight: &arm_weight,
        };
        let trees = grow_forest(&columns, &table, n, params);
        Ok(ForestModel {
            kind: ForestKind::Causal,
            params: params.clone(),
            n_features: features.n_cols(),
            trees,
            training_units: (0..n).collect(),
            target: outcome.to_vec(),
            treated: treated.to_vec(),
            rows: row_major(features),
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_training(&self) -> usize {
        self.target.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    /// Forest weights of the training units for query `x`, as
    /// `(dataset unit, weight)` pairs sorted by unit. Weights sum to one.
    pub fn predict_weights(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_dim(x)?;
        let mut w = vec![0.0; self.n_training()];
        let mut used = 0usize;
        for tree in &self.trees {
            let leaf = tree.leaf_of(x);
            if leaf.members.is_empty() {
                continue;
            }
            used += 1;
            let share = 1.0 / leaf.members.len() as f64;
            for &j in &leaf.members {
                w[j as usize] += share;
            }
        }
        let mut out: Vec<(usize, f64)> = w
            .into_iter()
            .enumerate()
            .filter(|(_, v)| *v > 0.0)
            .map(|(j, v)| (self.training_units[j], v / used as f64))
            .collect();
        out.sort_by_key(|p| p.0);
        Ok(out)
    }

    fn regression_from_leaves<'a>(&self, leaves: impl Iterator<Item = &'a Leaf>) -> Option<f64> {
        let mut reference = None;
        let mut acc = 0.0;
        let mut count = 0usize;
        for leaf in leaves.filter(|l| !l.members.is_empty()) {
            let r = *reference.get_or_insert(leaf.mean);
            acc += leaf.mean - r;
            count += 1;
        }
        reference.map(|r| r + acc / count as f64)
    }

    fn causal_from_leaves<'a>(&self, leaves: impl Iterator<Item = &'a Leaf>) -> Option<f64> {
        let (mut a1, mut b1, mut a0, mut b0) = (0.0, 0.0, 0.0, 0.0);
        for leaf in leaves {
            if leaf.members.is_empty() {
                continue;
            }
            let share = 1.0 / leaf.members.len() as f64;
            a1 += f64::from(leaf.n_treated) * share;
            b1 += leaf.sum_treated * share;
            a0 += f64::from(leaf.n_control) * share;
            b0 += leaf.sum_control * share;
        }
        (a1 > 0.0 && a0 > 0.0).then(|| b1 / a1 - b0 / a0)
    }

    /// Regression prediction at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if self.kind != ForestKind::Regression {
            return Err(Error::InvalidData("predict requires a regression forest".into()));
        }
        self.regression_from_leaves(self.trees.iter().map(|t| t.leaf_of(x)))
            .ok_or_else(|| Error::MissingSupport("no populated leaf".into()))
    }

    /// Weighted difference of treated and control means at `x`.
    pub fn predict_cate(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if self.kind != ForestKind::Causal {
            return Err(Error::InvalidData("predict_cate requires a causal forest".into()));
        }
        self.causal_from_leaves(self.trees.iter().map(|t| t.leaf_of(x)))
            .ok_or_else(|| Error::MissingSupport("query shares no leaf with one of the arms".into()))
    }

    /// Predictions for every row of `features` (regression or CATE by kind).
    pub fn predict_all(&self, features: &Covariates) -> Result<Vec<f64>> {
        if features.n_cols() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: features.n_cols() });
        }
        map_indexed(features.n_rows(), |i| match self.kind {
            ForestKind::Regression => self.predict(features.row(i)),
            ForestKind::Causal => self.predict_cate(features.row(i)),
        })
        .into_iter()
        .collect()
    }

    fn oob(&self, combine: impl Fn(&mut dyn Iterator<Item = &Leaf>) -> Option<f64> + Sync + Send) -> Result<Vec<f64>> {
        let d = self.n_features;
        map_indexed(self.n_training(), |i| {
            let x = &self.rows[i * d..(i + 1) * d];
            let mut leaves = self.trees.iter().filter(|t| !t.contains(i)).map(|t| t.leaf_of(x));
            combine(&mut leaves).ok_or_else(|| {
                Error::MissingSupport(format!("training unit {} has no usable out-of-bag tree", self.training_units[i]))
            })
        })
        .into_iter()
        .collect()
    }

    /// Out-of-bag regression predictions for the training units, in training order.
    pub fn oob_predictions(&self) -> Result<Vec<f64>> {
        if self.kind != ForestKind::Regression {
            return Err(Error::InvalidData("oob_predictions requires a regression forest".into()));
        }
        self.oob(|leaves| self.regression_from_leaves(leaves))
    }

    /// Out-of-bag CATE estimates for the training units, in training order.
    /// Only trees whose subsample excludes the unit contribute.
    pub fn oob_estimates(&self) -> Result<Vec<f64>> {
        if self.kind != ForestKind::Causal {
            return Err(Error::InvalidData("oob_estimates requires a causal forest".into()));
        }
        self.oob(|leaves| self.causal_from_leaves(leaves))
    }

    /// Split counts per feature over all internal nodes of all trees.
    pub fn variable_importance(&self) -> VariableImportance {
        let mut counts = vec![0usize; self.n_features];
        for tree in &self.trees {
            for f in tree.split_features() {
                counts[f] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let normalized =
            counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect();
        VariableImportance { counts, normalized, has_splits: total > 0 }
    }

    /// Debug dump of all trees as JSON; not a stable format.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Structure and estimation halves of tree `b`, as dataset units.
    pub fn tree_halves(&self, b: usize) -> (Vec<usize>, Vec<usize>) {
        let map = |v: &[u32]| v.iter().map(|&i| self.training_units[i as usize]).collect();
        (map(&self.trees[b].structure), map(&self.trees[b].estimation))
    }

    /// Estimation members of every leaf of tree `b`, as dataset units.
    pub fn tree_leaves(&self, b: usize) -> Vec<Vec<usize>> {
        self.trees[b]
            .leaves
            .iter()
            .map(|l| l.members.iter().map(|&i| self.training_units[i as usize]).collect())
            .collect()
    }

    /// Arms of the training units (causal forests).
    pub fn training_treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn training_target(&self) -> &[f64] {
        &self.target
    }

    fn with_units(mut self, units: Vec<usize>) -> Self {
        self.training_units = units;
        self
    }
}

/// Treated-minus-control weighted means for explicit weights over units.
pub fn cate_from_weights(weights: &[(usize, f64)], outcome: &[f64], treated: &[bool]) -> Result<f64> {
    let (mut a1, mut b1, mut a0, mut b0) = (0.0, 0.0, 0.0, 0.0);
    for &(j, w) in weights {
        if treated[j] {
            a1 += w;
            b1 += w * outcome[j];
        } else {
            a0 += w;
            b0 += w * outcome[j];
        }
    }
    if a1 <= 0.0 || a0 <= 0.0 {
        return Err(Error::MissingSupport("weights vanish on one arm".into()));
    }
    Ok(b1 / a1 - b0 / a0)
}

fn subset_units(data: &Dataset, subset: Option<&[usize]>) -> Result<Vec<usize>> {
    let units: Vec<usize> = subset.map_or_else(|| (0..data.n()).collect(), <[usize]>::to_vec);
    if units.is_empty() {
        return Err(Error::InsufficientData("empty training subset".into()));
    }
    if let Some(&bad) = units.iter().find(|&&i| i >= data.n()) {
        return Err(Error::DimensionMismatch { expected: data.n(), got: bad });
    }
    Ok(units)
}

/// Regression forest of a dataset column on the covariates of `subset`.
pub fn fit_regression_forest(
    data: &Dataset,
    target: Target,
    subset: Option<&[usize]>,
    params: &ForestParams,
) -> Result<ForestModel> {
    let units = subset_units(data, subset)?;
    let y: Vec<f64> = match target {
        Target::Outcome => units.iter().map(|&i| data.y(i)).collect(),
        Target::Treatment => units.iter().map(|&i| f64::from(data.treatment[i])).collect(),
        Target::Flag => {
            let flag = data.flag.as_ref().ok_or_else(|| Error::InvalidData("dataset has no flag column".into()))?;
            units.iter().map(|&i| f64::from(flag[i])).collect()
        }
    };
    let x = data.covariates.select_rows(&units);
    Ok(ForestModel::fit_regression(&x, &y, params)?.with_units(units))
}

/// Causal forest on the covariates of `subset`.
pub fn fit_causal_forest(
    data: &Dataset,
    subset: Option<&[usize]>,
    params: &ForestParams,
    propensity: &Propensity,
) -> Result<ForestModel> {
    let units = subset_units(data, subset)?;
    let x = data.covariates.select_rows(&units);
    let y: Vec<f64> = units.iter().map(|&i| data.y(i)).collect();
    let t: Vec<bool> = units.iter().map(|&i| data.is_treated(i)).collect();
    Ok(ForestModel::fit_causal(&x, &y, &t, propensity, params)?.with_units(units))
}

#[cfg(test)]
mod tests;
