//! One function per verb. Each reads the resolved config and writes its
//! artifacts into the output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ctarget::aipw::{crossfit_nuisances, read_nuisances, CrossFit, NuisanceParams};
use ctarget::ate::{ate_aipw, ate_mean_difference};
use ctarget::dgp::{generate_synthetic, REDRAW_PROPENSITY};
use ctarget::folds::{make_folds, FoldAssignment};
use ctarget::heterogeneity::{
    calibration_regression, gates as gates_table, group_comparison, write_calibration_csv, write_gates_csv,
    write_group_comparison_csv, CALIBRATION_FORM,
};
use ctarget::io::{fmt_f64, read_dataset_file, read_truth, write_dataset_file, write_truth, DesignFile};
use ctarget::svg::{curves_chart, simulation_chart};
use ctarget::targeting::curve::write_curves_csv;
use ctarget::targeting::rate::{write_rate_csv, write_toc_csv};
use ctarget::targeting::simulation::write_simulation_csv;
use ctarget::targeting::{
    build_policy, policy_value_curve, rate_autoc, simulation_study, PolicyName, ScoringPolicy, SimulationConfig,
};
use ctarget::Dataset;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Write { path: path.to_path_buf(), source: e })
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> ctarget::Result<()>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| CliError::Write { path: path.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Write { path: path.to_path_buf(), source: e })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(ctarget::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Read { path: path.to_path_buf(), source: e })
}

/// The dataset named in `data`, or one generated in memory from `dgp`.
fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let Some(files) = &config.data else {
        return match &config.dgp {
            Some(dgp) => Ok(generate_synthetic(dgp)?),
            None => Err(CliError::Config("config needs a `data` or a `dgp` block".into())),
        };
    };
    let design = match &files.design {
        Some(p) => Some(serde_json::from_reader::<_, DesignFile>(open(p)?).map_err(ctarget::Error::from)?),
        None => None,
    };
    open(&files.dataset)?;
    let mut data = read_dataset_file(&files.dataset, design.as_ref())?;
    if let Some(p) = &files.truth {
        let truth = read_truth(open(p)?)?;
        data = data.with_truth(truth)?;
    }
    Ok(data)
}

fn check_policies(config: &RunConfig, data: &Dataset) -> Result<(), CliError> {
    if config.policies.is_empty() {
        return Err(CliError::Config("`policies` must not be empty".into()));
    }
    if config.policies.contains(&PolicyName::Oracle) && data.truth.is_none() {
        return Err(CliError::Config("policy Oracle needs ground truth (`data.truth` or a `dgp` block)".into()));
    }
    if config.policies.contains(&PolicyName::PredictedFlag) && data.flag.is_none() {
        return Err(CliError::Config("policy PredictedFlag needs a `flag` column".into()));
    }
    Ok(())
}

struct Fitted {
    data: Dataset,
    fit: CrossFit,
}

fn fit_with(config: &RunConfig, data: Dataset, nuisance: &NuisanceParams) -> Result<CrossFit, CliError> {
    let folds = make_folds(data.n(), config.folds, config.fold_seed)?;
    Ok(crossfit_nuisances(&data, &folds, nuisance, config.propensity_mode)?)
}

fn fit(config: &RunConfig) -> Result<Fitted, CliError> {
    let data = load_dataset(config)?;
    check_policies(config, &data)?;
    let fit = fit_with(config, data.clone(), &config.nuisance)?;
    Ok(Fitted { data, fit })
}

fn policies(config: &RunConfig, f: &Fitted) -> Result<Vec<ScoringPolicy>, CliError> {
    config.policies.iter().map(|&name| Ok(build_policy(name, &f.data, &f.fit, &config.policy)?)).collect()
}

pub fn gen(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dgp = config.dgp.as_ref().ok_or_else(|| CliError::Config("`gen` needs a `dgp` block".into()))?;
    let data = generate_synthetic(dgp)?;
    write_dataset_file(&out.join("data.csv"), &data, false)?;
    if let Some(truth) = &data.truth {
        write_with(&out.join("truth.csv"), |w| write_truth(truth, w))?;
    }
    write_json(&out.join("design.json"), &DesignFile { batch_propensities: data.design_propensity.clone() })
}

#[derive(Serialize)]
struct Metadata<'a> {
    master_seed: u64,
    n_units: usize,
    fold_sizes: Vec<usize>,
    propensity_mode: ctarget::aipw::PropensityMode,
    propensity_clip_count: usize,
    calibration_form: &'a str,
    redraw_propensity: f64,
    policies: BTreeMap<&'static str, BTreeMap<String, String>>,
}

fn write_gates(config: &RunConfig, f: &Fitted, out: &Path) -> Result<(), CliError> {
    let g = gates_table(&f.fit.scores, config.gates_groups)?;
    write_with(&out.join("gates.csv"), |w| write_gates_csv(&g, w))?;
    if let Some(flag) = &f.data.flag {
        let c = group_comparison(&f.fit.scores, flag)?;
        write_with(&out.join("group_comparison.csv"), |w| write_group_comparison_csv(&c, w))?;
    }
    Ok(())
}

fn write_calibration(config: &RunConfig, f: &Fitted, out: &Path) -> Result<(), CliError> {
    let c = calibration_regression(&f.data, &f.fit.scores, config.calibration_share)?;
    write_with(&out.join("calibration.csv"), |w| write_calibration_csv(&c, w))
}

fn write_rate(config: &RunConfig, f: &Fitted, policies: &[ScoringPolicy], out: &Path) -> Result<(), CliError> {
    let results =
        policies.iter().map(|p| rate_autoc(p, &f.fit.scores, &config.q_grid, &config.rate)).collect::<Result<Vec<_>, _>>()?;
    write_with(&out.join("rate.csv"), |w| write_rate_csv(&results, w))?;
    write_with(&out.join("toc.csv"), |w| write_toc_csv(&results, w))
}

fn write_scores(f: &Fitted, out: &Path) -> Result<(), CliError> {
    write_with(&out.join("scores.csv"), |w| f.fit.scores.write_csv(w))
}

pub fn evaluate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let f = fit(config)?;
    let policies = policies(config, &f)?;
    write_scores(&f, out)?;

    let md = ate_mean_difference(&f.data)?;
    let aipw = ate_aipw(&f.fit.scores);
    let mut ate = String::from("estimator,estimate,se\n");
    for (name, e) in [("mean_difference", md), ("aipw", aipw)] {
        ate.push_str(&format!("{name},{},{}\n", fmt_f64(e.estimate), fmt_f64(e.se)));
    }
    write_text(&out.join("ate.csv"), &ate)?;

    let curves = policies
        .iter()
        .map(|p| policy_value_curve(p, &f.fit.scores, &config.q_grid))
        .collect::<Result<Vec<_>, _>>()?;
    write_with(&out.join("curves.csv"), |w| write_curves_csv(&curves, w))?;
    write_text(&out.join("curves.svg"), &curves_chart(&curves, "Estimated outcome rate by fraction treated"))?;

    write_rate(config, &f, &policies, out)?;
    write_gates(config, &f, out)?;
    write_calibration(config, &f, out)?;

    let meta = Metadata {
        master_seed: config.seed,
        n_units: f.data.n(),
        fold_sizes: f.fit.scores.folds.sizes(),
        propensity_mode: f.fit.scores.propensity_mode,
        propensity_clip_count: f.fit.scores.clip_count,
        calibration_form: CALIBRATION_FORM,
        redraw_propensity: REDRAW_PROPENSITY,
        policies: policies.iter().map(|p| (p.name.as_str(), p.metadata.clone())).collect(),
    };
    write_json(&out.join("metadata.json"), &meta)
}

pub fn gates(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let f = fit_nuisances_only(config)?;
    write_scores(&f, out)?;
    write_gates(config, &f, out)
}

pub fn calibrate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let f = fit_nuisances_only(config)?;
    write_scores(&f, out)?;
    write_calibration(config, &f, out)
}

pub fn rate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let f = fit(config)?;
    let policies = policies(config, &f)?;
    write_rate(config, &f, &policies, out)
}

/// Cross-fit without the policy checks, for verbs that only use `tau_hat`.
fn fit_nuisances_only(config: &RunConfig) -> Result<Fitted, CliError> {
    let data = load_dataset(config)?;
    let fit = fit_with(config, data.clone(), &config.nuisance)?;
    Ok(Fitted { data, fit })
}

pub fn sweep(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sweep = config.sweep.as_ref().ok_or_else(|| CliError::Config("`sweep` needs a `sweep` block".into()))?;
    if sweep.min_node_size.is_empty() || sweep.n_trees.is_empty() {
        return Err(CliError::Config("sweep grid is empty: list at least one `min_node_size` and `n_trees`".into()));
    }
    if sweep.min_node_size.contains(&0) {
        return Err(CliError::Config("sweep.min_node_size: values must be at least 1".into()));
    }
    if sweep.n_trees.contains(&0) {
        return Err(CliError::Config("sweep.n_trees: values must be at least 1".into()));
    }
    if sweep.policies.is_empty() {
        return Err(CliError::Config("sweep.policies must not be empty".into()));
    }
    let data = load_dataset(config)?;
    let sweep_config = RunConfig { policies: sweep.policies.clone(), ..config.clone() };
    check_policies(&sweep_config, &data)?;
    let q = [sweep.q];

    let mut csv = String::from("policy,min_node_size,n_trees,q,value,delta,se\n");
    for &m in &sweep.min_node_size {
        for &t in &sweep.n_trees {
            let mut nuisance = config.nuisance.clone();
            nuisance.causal.min_node_size = m;
            nuisance.causal.n_trees = t;
            let fit = fit_with(config, data.clone(), &nuisance)?;
            let f = Fitted { data: data.clone(), fit };
            for p in policies(&sweep_config, &f)? {
                let c = policy_value_curve(&p, &f.fit.scores, &q)?;
                csv.push_str(&format!(
                    "{},{m},{t},{},{},{},{}\n",
                    p.name,
                    fmt_f64(sweep.q),
                    fmt_f64(c.value[0]),
                    fmt_f64(c.delta_vs_random[0]),
                    fmt_f64(c.se_delta[0])
                ));
            }
        }
    }
    write_text(&out.join("sweep.csv"), &csv)
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let block =
        config.simulation.as_ref().ok_or_else(|| CliError::Config("`simulate` needs a `simulation` block".into()))?;
    let sim = SimulationConfig {
        lambdas: block.lambdas.clone(),
        n_draws: block.n_draws,
        policies: block.policies.clone(),
        q_grid: config.q_grid.clone(),
        nuisance: config.nuisance.clone(),
        policy: config.policy.clone(),
        evaluation: block.evaluation,
        seed: config.simulation_seed,
    };
    sim.validate()?;
    let path = config
        .data
        .as_ref()
        .and_then(|d| d.nuisances.as_ref())
        .ok_or_else(|| CliError::Config("`simulate` needs fitted nuisances in `data.nuisances`".into()))?;
    let table = read_nuisances(open(path)?)?;
    let data = load_dataset(config)?;
    if table.f_hat.len() != data.n() {
        return Err(ctarget::Error::DimensionMismatch { expected: data.n(), got: table.f_hat.len() }.into());
    }
    let k = table.fold.iter().max().map_or(0, |m| m + 1);
    let folds = FoldAssignment::from_assignment(table.fold, k)?;
    let result = simulation_study(&data, &table.f_hat, &table.tau_hat, &folds, &sim)?;
    write_with(&out.join("simulation.csv"), |w| write_simulation_csv(&result, w))?;
    write_text(&out.join("simulation.svg"), &simulation_chart(&result))
}
