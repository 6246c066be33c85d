//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes the page settings as a JSON string and returns a JSON
//! string; errors come back as a thrown string. The work itself lives in
//! [`demo`] so it can be tested natively.

pub mod demo;

use wasm_bindgen::prelude::*;

fn run(f: impl FnOnce(&demo::Settings) -> ctarget::Result<String>, settings: &str) -> Result<String, JsValue> {
    let settings: demo::Settings = serde_json::from_str(settings).map_err(|e| JsValue::from_str(&e.to_string()))?;
    f(&settings).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Policy-value curves, AUTOC and ATE on a freshly drawn trial.
#[wasm_bindgen]
pub fn evaluate_policies(settings: &str) -> Result<String, JsValue> {
    run(demo::evaluate_policies, settings)
}

/// GATES quartiles and the calibration slope.
#[wasm_bindgen]
pub fn heterogeneity_tests(settings: &str) -> Result<String, JsValue> {
    run(demo::heterogeneity_tests, settings)
}

/// Semi-synthetic study over heterogeneity multipliers.
#[wasm_bindgen]
pub fn redraw_study(settings: &str) -> Result<String, JsValue> {
    run(demo::redraw_study, settings)
}
