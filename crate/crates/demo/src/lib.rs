//! Browser bindings for three interactive views: routing a single
//! distribution, sweeping thresholds over a synthetic population, and
//! reliability binning under adjustable overconfidence.
//!
//! Each operation has a plain Rust function returning JSON (tested natively)
//! and a `#[wasm_bindgen]` wrapper for the page.

use deferral_core::calibration::reliability;
use deferral_core::sweep::{run_sweep, ThresholdGrid};
use deferral_core::{
    route, validate_distribution, DecisionLabel, PredictionRecord, Result, ThresholdPolicy, Thresholds,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
struct RouteView {
    p_yes: f64,
    p_no: f64,
    p_tbd: f64,
    routed: DecisionLabel,
    raw_argmax: DecisionLabel,
    rule_fired: String,
    confidence: f64,
    margin: f64,
}

/// Routes one distribution. Inputs need not sum to 1; they are normalized
/// first so sliders can move freely.
pub fn route_json(weights: [f64; 3], tau: [f64; 3], margin_min: Option<f64>) -> Result<String> {
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(deferral_core::Error::Range("weights must have positive mass".into()));
    }
    let dist = validate_distribution(weights[0] / total, weights[1] / total, weights[2] / total)?;
    let policy = ThresholdPolicy::new(
        "demo",
        "1",
        Thresholds {
            yes: tau[0],
            no: tau[1],
            tbd: tau[2],
        },
        margin_min,
        Vec::new(),
    )?;
    let r = route(&dist, None, &policy)?;
    Ok(to_json(&RouteView {
        p_yes: dist.p_yes(),
        p_no: dist.p_no(),
        p_tbd: dist.p_tbd(),
        routed: r.routed,
        raw_argmax: r.raw_argmax,
        rule_fired: r.rule_fired.as_str().to_string(),
        confidence: r.confidence,
        margin: r.margin,
    }))
}

fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Synthetic scored population. Gold is drawn from `softmax(z)`, so the
/// reported `softmax(z * overconfidence)` is calibrated at 1.0, overconfident
/// above it and underconfident below it. `separation` scales the logits.
pub fn population(n: usize, seed: u64, separation: f64, overconfidence: f64) -> Result<Vec<PredictionRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let z = [(); 3].map(|_| separation * rng.sample::<f64, _>(StandardNormal));
            let truth = softmax(z);
            let u: f64 = rng.gen();
            let gold = if u < truth[0] {
                DecisionLabel::Yes
            } else if u < truth[0] + truth[1] {
                DecisionLabel::No
            } else {
                DecisionLabel::Tbd
            };
            let p = softmax(z.map(|v| v * overconfidence));
            let dist = validate_distribution(p[0], p[1], p[2])?;
            PredictionRecord::new(format!("d{i}"), dist, Some(gold), None)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    tau: f64,
    tbd_rate: f64,
    macro_f1: f64,
    accuracy: f64,
}

/// Joint-threshold sweep over a synthetic population.
pub fn sweep_json(n: usize, seed: u64, separation: f64, steps: usize) -> Result<String> {
    let records = population(n, seed, separation, 1.0)?;
    let steps = steps.max(2);
    let taus: Vec<f64> = (0..steps)
        .map(|k| 1.0 / 3.0 + (1.0 - 1.0 / 3.0) * k as f64 / (steps - 1) as f64)
        .collect();
    let table = run_sweep(&records, &ThresholdGrid::joint(taus), None, "demo")?;
    let points: Vec<SweepPoint> = table
        .rows
        .iter()
        .map(|r| SweepPoint {
            tau: r.tau_yes,
            tbd_rate: r.tbd_rate,
            macro_f1: r.report.macro_f1,
            accuracy: r.report.accuracy,
        })
        .collect();
    Ok(to_json(&points))
}

/// Reliability bins and ECE for a population with adjustable overconfidence.
pub fn reliability_json(n: usize, seed: u64, overconfidence: f64, bins: usize) -> Result<String> {
    let records = population(n, seed, 1.5, overconfidence)?;
    Ok(to_json(&reliability(&records, bins)?))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo views serialize")
}

fn js_error(e: deferral_core::Error) -> JsError {
    JsError::new(&format!("[{}] {e}", e.code()))
}

#[wasm_bindgen(js_name = routeDistribution)]
pub fn route_distribution(
    p_yes: f64,
    p_no: f64,
    p_tbd: f64,
    tau_yes: f64,
    tau_no: f64,
    tau_tbd: f64,
    margin_min: f64,
) -> std::result::Result<String, JsError> {
    let margin = (margin_min > 0.0).then_some(margin_min);
    route_json([p_yes, p_no, p_tbd], [tau_yes, tau_no, tau_tbd], margin).map_err(js_error)
}

#[wasm_bindgen(js_name = sweepThresholds)]
pub fn sweep_thresholds(n: usize, seed: u32, separation: f64, steps: usize) -> std::result::Result<String, JsError> {
    sweep_json(n, u64::from(seed), separation, steps).map_err(js_error)
}

#[wasm_bindgen(js_name = reliabilityBins)]
pub fn reliability_bins(n: usize, seed: u32, overconfidence: f64, bins: usize) -> std::result::Result<String, JsError> {
    reliability_json(n, u64::from(seed), overconfidence, bins).map_err(js_error)
}
