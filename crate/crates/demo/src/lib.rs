//! Browser explorer over the gridleak library. Every export returns a JSON
//! string so the page needs no generated bindings beyond `wasm-bindgen`'s
//! glue. The same functions are plain Rust on native targets.

use gridleak::attack::{gen_signature_set, SignatureSpec};
use gridleak::blackbox::LocalOracle;
use gridleak::dataio::{generate_dataset, Property, SynthConfig};
use gridleak::forecaster::{train_forecaster, ForecastHyperparams};
use gridleak::metrics::roc_auc;
use gridleak::seed::derive_named;
use serde_json::{json, Value};
use std::sync::Arc;
use wasm_bindgen::prelude::*;

const SLOTS: usize = 48;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn household(seed: u32, days: u32, index: u32) -> Result<gridleak::dataio::Household, String> {
    let n = (index as usize + 1).max(2);
    let ds = generate_dataset(&SynthConfig::new(n, days as usize, seed as u64)).map_err(|e| e.to_string())?;
    Ok(ds.households[index as usize].clone())
}

pub fn profile_json(seed: u32, days: u32, index: u32) -> Result<Value, String> {
    let h = household(seed, days, index)?;
    let r = &h.record;
    let full = r.len() / SLOTS;
    let mut mean_day = vec![0.0; SLOTS];
    for d in 0..full {
        for (s, m) in mean_day.iter_mut().enumerate() {
            *m += r.readings[d * SLOTS + s] / full as f64;
        }
    }
    let labels: serde_json::Map<String, Value> = Property::ALL
        .iter()
        .map(|p| (p.key().to_string(), Value::Bool(h.labels.get(*p))))
        .collect();
    Ok(json!({
        "meter_id": r.meter_id,
        "start": r.start.to_string(),
        "labels": labels,
        "mean_day": mean_day,
        "first_week": &r.readings[..r.len().min(7 * SLOTS)],
    }))
}

/// Trains a small forecaster on one synthetic household and extracts its
/// `k`-row signature with tau = w = 48.
pub fn signature_json(seed: u32, days: u32, lstm_nodes: u32, k: u32) -> Result<Value, String> {
    let h = household(seed, days, 0)?;
    let hp = ForecastHyperparams {
        lstm_nodes: lstm_nodes.max(1) as usize,
        fc_nodes: 8,
        epochs: 2,
        max_windows_per_epoch: 256,
        ..ForecastHyperparams::default()
    };
    let trained = train_forecaster(&h.record, &hp, derive_named(seed as u64, "demo")).map_err(|e| e.to_string())?;
    let range = (h.record.start, h.record.end());
    let spec =
        SignatureSpec::sample(hp.window, hp.window, k.max(1) as usize, range, seed as u64, seed as u64 + 1).map_err(|e| e.to_string())?;
    let params = trained.model.param_count();
    let mut oracle = LocalOracle::new(Arc::new(trained.model));
    let set = gen_signature_set(&mut oracle, &spec, "demo").map_err(|e| e.to_string())?;
    let rows: Vec<&Vec<f64>> = set.rows.iter().map(|r| &r.values).collect();
    Ok(json!({
        "test_mae": trained.test_mae,
        "params": params,
        "queries": oracle.stats().total(),
        "dates": spec.dates.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
        "rows": rows,
    }))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("cannot parse {t:?}")))
        .collect()
}

/// ROC points (one per distinct threshold) and AUC for comma- or
/// space-separated scores and 0/1 labels.
pub fn roc_json(scores: &str, labels: &str) -> Result<Value, String> {
    let scores: Vec<f64> = parse_list(scores)?;
    let labels: Vec<bool> = parse_list::<u8>(labels)?.into_iter().map(|l| l != 0).collect();
    let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut points = vec![[0.0, 0.0]];
    for (i, &j) in order.iter().enumerate() {
        if labels[j] {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        if order.get(i + 1).is_none_or(|n| scores[*n] != scores[j]) {
            points.push([fp / neg, tp / pos]);
        }
    }
    Ok(json!({ "auc": auc, "points": points }))
}

#[wasm_bindgen]
pub fn profile(seed: u32, days: u32, index: u32) -> Result<String, JsError> {
    profile_json(seed, days, index).map(|v| v.to_string()).map_err(err)
}

#[wasm_bindgen]
pub fn signature(seed: u32, days: u32, lstm_nodes: u32, k: u32) -> Result<String, JsError> {
    signature_json(seed, days, lstm_nodes, k).map(|v| v.to_string()).map_err(err)
}

#[wasm_bindgen]
pub fn roc(scores: &str, labels: &str) -> Result<String, JsError> {
    roc_json(scores, labels).map(|v| v.to_string()).map_err(err)
}
