use super::*;
use crate::rng::stream_rng;
use rand::Rng;

fn uniform_features(n: usize, d: usize, seed: u64) -> Covariates {
    let mut rng = stream_rng(seed, 0);
    Covariates::new(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn params(trees: usize) -> ForestParams {
    ForestParams { n_trees: trees, seed: 3, ..ForestParams::default() }
}

#[test]
fn constant_target_predicts_constant_exactly() {
    let x = uniform_features(200, 3, 1);
    let f = ForestModel::fit_regression(&x, &vec![0.4; 200], &params(25)).unwrap();
    for i in 0..20 {
        assert_eq!(f.predict(x.row(i)).unwrap(), 0.4);
    }
    assert!(f.oob_predictions().unwrap().iter().all(|&p| p == 0.4));
    assert!(!f.variable_importance().has_splits);
}

#[test]
fn binary_covariate_recovers_group_means() {
    let n = 2000;
    let mut rng = stream_rng(9, 0);
    let xs: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.4))).collect();
    let y: Vec<f64> = xs
        .iter()
        .map(|&x| f64::from(u8::from(rng.random::<f64>() < if x > 0.5 { 0.7 } else { 0.2 })))
        .collect();
    // oracle: plain group means
    let mean_of = |g: f64| {
        let v: Vec<f64> = (0..n).filter(|&i| xs[i] == g).map(|i| y[i]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let oracle = [mean_of(0.0), mean_of(1.0)];
    let x = Covariates::new(n, 1, xs).unwrap();
    let f = ForestModel::fit_regression(&x, &y, &params(300)).unwrap();
    for (g, want) in oracle.iter().enumerate() {
        let p = f.predict(&[g as f64]).unwrap();
        assert!((p - want).abs() < 0.01, "group {g}: {p} vs {want}");
    }
}

#[test]
fn too_small_subset_is_an_error() {
    let x = uniform_features(9, 2, 1);
    let p = params(5);
    assert!(matches!(ForestModel::fit_regression(&x, &[0.0; 9], &p), Err(Error::InsufficientData(_))));
    let x = uniform_features(10, 2, 1);
    assert!(ForestModel::fit_regression(&x, &[0.0; 10], &p).is_ok());
}

#[test]
fn single_leaf_weights_are_uniform() {
    let x = uniform_features(20, 2, 4);
    let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let p = ForestParams { n_trees: 1, max_depth: Some(0), ..params(1) };
    let f = ForestModel::fit_regression(&x, &y, &p).unwrap();
    let w = f.predict_weights(x.row(0)).unwrap();
    assert_eq!(w.len(), 5);
    assert!(w.iter().all(|&(_, v)| (v - 0.2).abs() < 1e-15));
    let (structure, estimation) = f.tree_halves(0);
    let weighted: Vec<usize> = w.iter().map(|p| p.0).collect();
    assert_eq!(weighted, estimation);
    assert!(structure.iter().all(|u| !weighted.contains(u)));
}

#[test]
fn weights_sum_to_one_and_reproduce_predictions() {
    let x = uniform_features(400, 3, 5);
    let y: Vec<f64> = (0..400).map(|i| x.get(i, 0) * 2.0 + x.get(i, 1)).collect();
    let f = ForestModel::fit_regression(&x, &y, &params(40)).unwrap();
    let q = uniform_features(10, 3, 6);
    for i in 0..10 {
        let w = f.predict_weights(q.row(i)).unwrap();
        let s: f64 = w.iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-10);
        let via_weights: f64 = w.iter().map(|&(j, v)| v * y[j]).sum();
        assert!((via_weights - f.predict(q.row(i)).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn stump_forest_predicts_estimation_half_mean() {
    let x = uniform_features(300, 2, 8);
    let y: Vec<f64> = (0..300).map(|i| (i % 7) as f64).collect();
    let p = ForestParams { max_depth: Some(0), ..params(30) };
    let f = ForestModel::fit_regression(&x, &y, &p).unwrap();
    let expected: f64 = (0..30)
        .map(|b| {
            let (_, est) = f.tree_halves(b);
            est.iter().map(|&j| y[j]).sum::<f64>() / est.len() as f64
        })
        .sum::<f64>()
        / 30.0;
    assert!((f.predict(&[0.3, 0.3]).unwrap() - expected).abs() < 1e-10);
}

#[test]
fn honesty_and_leaf_sizes() {
    let n = 1200;
    let x = uniform_features(n, 3, 10);
    let mut rng = stream_rng(10, 1);
    let t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
    let y: Vec<f64> = (0..n).map(|i| f64::from(u8::from(rng.random::<f64>() < 0.3 + 0.3 * x.get(i, 0)))).collect();
    let p = ForestParams { min_node_size: 8, ..params(20) };
    let f = ForestModel::fit_causal(&x, &y, &t, &Propensity::Known(vec![0.5; n]), &p).unwrap();
    for b in 0..f.n_trees() {
        let (s, e) = f.tree_halves(b);
        assert!(s.iter().all(|u| e.binary_search(u).is_err()));
        let leaves = f.tree_leaves(b);
        let members: usize = leaves.iter().map(Vec::len).sum();
        assert_eq!(members, e.len());
        if leaves.len() > 1 {
            for leaf in &leaves {
                let treated = leaf.iter().filter(|&&j| t[j]).count();
                assert!(treated >= 8 && leaf.len() - treated >= 8);
            }
        }
    }
}

#[test]
fn regression_oob_ignores_own_outcome() {
    let n = 300;
    let x = uniform_features(n, 2, 12);
    let mut y: Vec<f64> = (0..n).map(|i| x.get(i, 0)).collect();
    let base = ForestModel::fit_regression(&x, &y, &params(50)).unwrap().oob_predictions().unwrap();
    y[17] = 100.0;
    let moved = ForestModel::fit_regression(&x, &y, &params(50)).unwrap().oob_predictions().unwrap();
    assert_eq!(base[17], moved[17]);
}

#[test]
fn extreme_weights_give_unit_effect() {
    let outcome = [1.0, 1.0, 0.0, 0.0];
    let treated = [true, true, false, false];
    let w = [(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5)];
    assert_eq!(cate_from_weights(&w, &outcome, &treated).unwrap(), 1.0);
    let outcome = [1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let treated: Vec<bool> = (0..15).map(|i| i < 5).collect();
    let w: Vec<(usize, f64)> = (0..15).map(|i| (i, 1.0 / 15.0)).collect();
    // treated mean 0.6, control mean 0.5
    assert!((cate_from_weights(&w, &outcome, &treated).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn causal_prediction_matches_weight_display() {
    let n = 800;
    let x = uniform_features(n, 2, 14);
    let mut rng = stream_rng(14, 1);
    let t: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| f64::from(u8::from(rng.random::<f64>() < 0.3 + if t[i] { 0.4 * x.get(i, 1) } else { 0.0 })))
        .collect();
    let f = ForestModel::fit_causal(&x, &y, &t, &Propensity::Known(vec![0.5; n]), &params(30)).unwrap();
    let q = uniform_features(5, 2, 15);
    for i in 0..5 {
        let w = f.predict_weights(q.row(i)).unwrap();
        let display = cate_from_weights(&w, &y, &t).unwrap();
        assert!((display - f.predict_cate(q.row(i)).unwrap()).abs() < 1e-12);
    }
    assert_eq!(f.oob_estimates().unwrap().len(), n);
}

#[test]
fn single_arm_is_rejected() {
    let x = uniform_features(100, 2, 2);
    let err = ForestModel::fit_causal(&x, &[0.0; 100], &[true; 100], &Propensity::Estimate, &params(5));
    assert!(matches!(err, Err(Error::SingleArm(_))));
}

#[test]
fn dimension_mismatch_on_query() {
    let x = uniform_features(50, 2, 2);
    let f = ForestModel::fit_regression(&x, &[1.0; 50], &params(3)).unwrap();
    assert!(matches!(f.predict_weights(&[0.1]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn importance_single_covariate_and_normalization() {
    let x = uniform_features(500, 1, 3);
    let y: Vec<f64> = (0..500).map(|i| x.get(i, 0)).collect();
    let vi = ForestModel::fit_regression(&x, &y, &params(10)).unwrap().variable_importance();
    assert_eq!(vi.normalized, vec![1.0]);
    let x = uniform_features(500, 4, 3);
    let y: Vec<f64> = (0..500).map(|i| x.get(i, 2)).collect();
    let vi = ForestModel::fit_regression(&x, &y, &params(10)).unwrap().variable_importance();
    assert!((vi.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(vi.has_splits);
}

#[test]
fn fits_are_deterministic_and_dump() {
    let x = uniform_features(200, 2, 7);
    let y: Vec<f64> = (0..200).map(|i| x.get(i, 1)).collect();
    let a = ForestModel::fit_regression(&x, &y, &params(8)).unwrap();
    let b = ForestModel::fit_regression(&x, &y, &params(8)).unwrap();
    assert_eq!(a.oob_predictions().unwrap(), b.oob_predictions().unwrap());
    let json = a.to_json().unwrap();
    assert!(json.contains("\"threshold\""));
}

#[test]
fn dataset_wrappers_map_units() {
    use crate::data::Dataset;
    let n = 120;
    let x = uniform_features(n, 2, 20);
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y: Vec<u8> = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
    let data = Dataset::new(x, t, y, vec![0; n], vec![0.5]).unwrap();
    let subset: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
    let f = fit_regression_forest(&data, Target::Outcome, Some(&subset), &params(5)).unwrap();
    assert_eq!(f.training_units, subset);
    let w = f.predict_weights(data.covariates.row(0)).unwrap();
    assert!(w.iter().all(|(u, _)| u % 3 != 0));
    assert!(fit_regression_forest(&data, Target::Flag, None, &params(5)).is_err());
}
