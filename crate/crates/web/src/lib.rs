//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each exported function has a plain Rust counterpart so the logic is
//! testable without a browser.

use mambatab::model::{MambaTabModel, ModelConfig};
use mambatab::ssm::{self, InputDiscretization};
use mambatab::synthetic::{generate, SyntheticSpec};
use mambatab::tabular::{split, Preprocessor, Split};
use mambatab::tensor::{Tape, Tensor};
use mambatab::training::{self, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// `points` samples of `(delta, a_bar, b_bar)` for `delta` in `[0, delta_max]`,
/// flattened.
pub fn discretize_curve(a: f64, b: f64, delta_max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .flat_map(|i| {
            let delta = delta_max * i as f64 / (points - 1) as f64;
            let (ab, bb) = ssm::discretize(a, b, delta);
            [delta, ab, bb]
        })
        .collect()
}

/// Response of a single-channel, single-state scan to a unit impulse at the
/// first step, one row of `length` outputs per entry of `a_values`.
pub fn impulse_response(a_values: &[f64], delta: f64, length: usize) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(a_values.len() * length);
    for &a in a_values {
        let mut u = vec![0.0; length];
        if let Some(first) = u.first_mut() {
            *first = 1.0;
        }
        let mut tape = Tape::new();
        let t3 = |v: Vec<f64>| Tensor::new([1, length, 1], v).map_err(|e| e.to_string());
        let u = tape.constant(t3(u)?);
        let d = tape.constant(t3(vec![delta; length])?);
        let b = tape.constant(t3(vec![1.0; length])?);
        let c = tape.constant(t3(vec![1.0; length])?);
        let av = tape.constant(Tensor::full([1, 1], a));
        let skip = tape.constant(Tensor::zeros([1]));
        let y = ssm::selective_scan(&mut tape, u, d, b, c, av, skip, InputDiscretization::ExactZoh)
            .map_err(|e| e.to_string())?;
        out.extend_from_slice(tape.value(y).data());
    }
    Ok(out)
}

pub fn parameter_count(n_features: usize, embed_dim: usize, state_size: usize, expand: usize, m_blocks: usize) -> usize {
    ModelConfig {
        embed_dim,
        state_size,
        expand,
        n_blocks: m_blocks,
        ..ModelConfig::new(n_features)
    }
    .param_count()
}

#[derive(Debug, Serialize)]
pub struct DemoRun {
    pub param_count: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_auroc: Vec<f64>,
    pub test_auroc: f64,
    pub test_accuracy: f64,
}

/// Generates a synthetic table and trains a default-sized model on it.
pub fn train_demo(
    rows: usize,
    informative: usize,
    noise: usize,
    seed: u64,
    max_epochs: usize,
) -> Result<DemoRun, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let table = generate(&SyntheticSpec::new(rows, informative, noise, seed)).map_err(|e| err(&e))?;
    let (tr, va, te) = split(&table, seed).map_err(|e| err(&e))?;
    let pre = Preprocessor::fit(&tr).map_err(|e| err(&e))?;
    let enc = |t, s| pre.transform(t, s).map_err(|e| err(&e));
    let (train, val, test) = (enc(&tr, Split::Train)?, enc(&va, Split::Val)?, enc(&te, Split::Test)?);
    let model = MambaTabModel::new(ModelConfig::new(train.cols), seed).map_err(|e| err(&e))?;
    let cfg = TrainConfig { max_epochs, seed, ..TrainConfig::default() };
    let (best, report) = training::train_supervised(model, &train, &val, &cfg).map_err(|e| err(&e))?;
    let eval = training::evaluate(&best, &test, seed).map_err(|e| err(&e))?;
    Ok(DemoRun {
        param_count: best.count_parameters(),
        best_epoch: report.best_epoch,
        train_loss: report.epochs.iter().map(|e| e.train_loss).collect(),
        val_loss: report.epochs.iter().map(|e| e.val_loss).collect(),
        val_auroc: report.epochs.iter().map(|e| e.val_auroc.unwrap_or(f64::NAN)).collect(),
        test_auroc: eval.auroc,
        test_accuracy: eval.accuracy,
    })
}

#[wasm_bindgen(js_name = discretizeCurve)]
pub fn discretize_curve_js(a: f64, b: f64, delta_max: f64, points: usize) -> Vec<f64> {
    discretize_curve(a, b, delta_max, points)
}

#[wasm_bindgen(js_name = impulseResponse)]
pub fn impulse_response_js(a_values: &[f64], delta: f64, length: usize) -> Result<Vec<f64>, JsError> {
    impulse_response(a_values, delta, length).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = parameterCount)]
pub fn parameter_count_js(n_features: usize, embed_dim: usize, state_size: usize, expand: usize, m_blocks: usize) -> usize {
    parameter_count(n_features, embed_dim, state_size, expand, m_blocks)
}

/// Returns the run as a JSON string.
#[wasm_bindgen(js_name = trainDemo)]
pub fn train_demo_js(rows: usize, informative: usize, noise: usize, seed: u32, max_epochs: usize) -> Result<String, JsError> {
    let run = train_demo(rows, informative, noise, u64::from(seed), max_epochs).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&run).map_err(|e| JsError::new(&e.to_string()))
}
