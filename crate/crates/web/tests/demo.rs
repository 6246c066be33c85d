use ctarget_web::demo::{evaluate_policies, heterogeneity_tests, redraw_study, Heterogeneity, Settings};
use serde_json::Value;

fn small() -> Settings {
    Settings { n_units: 800, n_trees: 40, seed: 3, lambdas: vec![0.0, 1.0], n_draws: 1, ..Settings::default() }
}

#[test]
fn evaluate_reports_every_policy_and_a_chart() {
    let v: Value = serde_json::from_str(&evaluate_policies(&small()).unwrap()).unwrap();
    assert!(v["svg"].as_str().unwrap().starts_with("<svg"));
    let rows = v["policies"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    let row = |name: &str| rows.iter().find(|r| r["policy"] == name).unwrap()["delta_at_half"].as_f64().unwrap();
    assert!(row("Oracle") > row("Random"));
}

#[test]
fn operations_are_deterministic() {
    assert_eq!(heterogeneity_tests(&small()).unwrap(), heterogeneity_tests(&small()).unwrap());
}

#[test]
fn heterogeneity_report_has_quartiles() {
    let s = Settings { heterogeneity: Heterogeneity::None, ..small() };
    let v: Value = serde_json::from_str(&heterogeneity_tests(&s).unwrap()).unwrap();
    assert_eq!(v["gates"].as_array().unwrap().len(), 4);
    assert!(v["calibration_se"].as_f64().unwrap() > 0.0);
}

#[test]
fn redraw_study_renders_one_panel_per_lambda() {
    let v: Value = serde_json::from_str(&redraw_study(&small()).unwrap()).unwrap();
    assert!(v["svg"].as_str().unwrap().contains("<svg"));
}

#[test]
fn bad_settings_are_errors() {
    let s = Settings { folds: 1, ..small() };
    assert!(evaluate_policies(&s).is_err());
    assert!(serde_json::from_str::<Settings>(r#"{"n_unit": 5}"#).is_err());
}
