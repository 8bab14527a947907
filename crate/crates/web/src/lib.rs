//! WebAssembly bindings for the browser demo. Each export takes plain
//! numbers or JSON text and returns JSON text; the same functions are
//! callable natively for testing.

use fedsim::data::{generate_synthetic, partition_lda, Dataset, SyntheticSpec};
use fedsim::models::{ModelParams, ModelSpec};
use fedsim::rng::FedRng;
use fedsim::robust::{krum, multi_krum, rfa_with_trace};
use fedsim::topology::{build_topology, TopologySpec};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Synthetic data pooled from 30 generating clients, then split over
/// `n_clients` by per-class Dirichlet(`alpha`) proportions.
pub fn lda_histograms(n_clients: usize, alpha: f64, n_classes: usize, seed: u64) -> Result<Value, String> {
    let spec = SyntheticSpec {
        alpha: 0.0,
        beta: 0.0,
        n_clients: 30,
        n_features: 10,
        n_classes,
        samples_per_client: vec![50; 30],
    };
    let parts: Vec<Dataset> = generate_synthetic(&spec, seed)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|c| c.dataset)
        .collect();
    let pool = Dataset::concat(&parts).map_err(|e| e.to_string())?;
    let partition = partition_lda(&pool, n_clients, alpha, seed).map_err(|e| e.to_string())?;
    let histograms: Vec<Vec<usize>> = (0..n_clients).map(|k| pool.label_histogram(partition.client(k))).collect();
    Ok(json!({
        "histograms": histograms,
        "mean_label_entropy": partition.mean_label_entropy(&pool),
    }))
}

fn topology(kind: &str, n: usize) -> Result<TopologySpec, String> {
    Ok(match kind {
        "ring" => TopologySpec::Ring { n_workers: n },
        "star" => TopologySpec::Star { n_workers: n, hub_id: 0 },
        "full_mesh" => TopologySpec::FullMesh { n_workers: n },
        "hierarchical" => TopologySpec::Hierarchical { n_workers: n, group_size: 3 },
        other => return Err(format!("unknown topology {other:?}")),
    })
}

/// Gossip averaging `x <- W x` of random scalars with the topology's mixing
/// matrix; returns the max pairwise disagreement before each round.
pub fn consensus_curve(kind: &str, n: usize, rounds: usize, seed: u64) -> Result<Value, String> {
    let w = build_topology(&topology(kind, n)?)
        .and_then(|t| t.mixing_matrix())
        .map_err(|e| e.to_string())?;
    let mut rng = FedRng::new(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
    let spread = |x: &[f64]| {
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    let mut curve = vec![spread(&x)];
    for _ in 0..rounds {
        x = w.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        curve.push(spread(&x));
    }
    Ok(json!({ "disagreement": curve, "mixing_matrix": w }))
}

/// Aggregates 2-D points given as `[[x, y], ...]` with `mean`, `krum`,
/// `multi_krum` or `rfa`.
pub fn aggregate_points(points_json: &str, method: &str, f: usize) -> Result<Value, String> {
    let raw: Vec<[f64; 2]> = serde_json::from_str(points_json).map_err(|e| e.to_string())?;
    if raw.is_empty() {
        return Err("no points".into());
    }
    let shape = ModelSpec::logistic_regression(1, 1).shape();
    let points: Vec<ModelParams> = raw
        .iter()
        .map(|p| ModelParams::new(shape.clone(), p.to_vec()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let err = |e: fedsim::robust::RobustError| e.to_string();
    let (result, selected, iterations) = match method {
        "mean" => {
            let n = raw.len() as f64;
            let mean = [0, 1].map(|i| raw.iter().map(|p| p[i]).sum::<f64>() / n);
            (mean.to_vec(), None, None)
        }
        "krum" => {
            let (idx, p) = krum(&points, f).map_err(err)?;
            (p.into_values(), Some(idx), None)
        }
        "multi_krum" => {
            let m = raw.len().saturating_sub(f + 2).max(1);
            (multi_krum(&points, f, m).map_err(err)?.into_values(), None, None)
        }
        "rfa" => {
            let trace = rfa_with_trace(&points, &vec![1.0; raw.len()], 1e-9, 1000, 1e-10).map_err(err)?;
            (trace.median.into_values(), None, Some(trace.iterations))
        }
        other => return Err(format!("unknown method {other:?}")),
    };
    Ok(json!({ "point": result, "selected": selected, "iterations": iterations }))
}

#[wasm_bindgen(js_name = ldaHistograms)]
pub fn lda_histograms_js(n_clients: usize, alpha: f64, n_classes: usize, seed: u32) -> Result<String, JsError> {
    lda_histograms(n_clients, alpha, n_classes, seed as u64)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = consensusCurve)]
pub fn consensus_curve_js(kind: &str, n: usize, rounds: usize, seed: u32) -> Result<String, JsError> {
    consensus_curve(kind, n, rounds, seed as u64)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = aggregatePoints)]
pub fn aggregate_points_js(points_json: &str, method: &str, f: usize) -> Result<String, JsError> {
    aggregate_points(points_json, method, f)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e))
}
