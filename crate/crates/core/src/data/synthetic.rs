use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::rng::FedRng;

/// Synthetic(alpha, beta) federated data: each client has its own softmax
/// model and its own feature mean. `alpha` controls how much client models
/// differ, `beta` how much client feature distributions differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub alpha: f64,
    pub beta: f64,
    pub n_clients: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub samples_per_client: Vec<usize>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidSpec(msg));
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("alpha and beta must be finite and >= 0, got ({}, {})", self.alpha, self.beta));
        }
        if self.n_clients == 0 || self.n_features == 0 || self.n_classes == 0 {
            return bad("n_clients, n_features and n_classes must be positive".into());
        }
        if self.samples_per_client.len() != self.n_clients {
            return bad(format!(
                "samples_per_client has {} entries for {} clients",
                self.samples_per_client.len(),
                self.n_clients
            ));
        }
        if self.samples_per_client.contains(&0) {
            return bad("every client needs at least one sample".into());
        }
        Ok(())
    }
}

/// One generated client: its data and the model that labelled it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClient {
    pub dataset: Dataset,
    /// `n_features x n_classes`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Generates per-client datasets.
///
/// Per client `k`: `u_k ~ N(0, alpha^2)`, `B_k ~ N(0, beta^2)`, weights and
/// bias `~ N(u_k, 1)`, feature mean `v_k ~ N(B_k, 1)`, features
/// `x ~ N(v_k, diag(j^-1.2))` for `j = 1..d`, and
/// `y = argmax(W^T x + b)` with ties to the lowest class.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SyntheticClient>, DataError> {
    spec.validate()?;
    let (d, c) = (spec.n_features, spec.n_classes);
    let mut rng = FedRng::new(seed);
    let model_means: Vec<f64> = (0..spec.n_clients).map(|_| rng.normal(0.0, spec.alpha)).collect();
    let feature_means: Vec<f64> = (0..spec.n_clients).map(|_| rng.normal(0.0, spec.beta)).collect();
    let feature_std: Vec<f64> = (1..=d).map(|j| (j as f64).powf(-1.2).sqrt()).collect();

    let mut clients = Vec::with_capacity(spec.n_clients);
    for k in 0..spec.n_clients {
        let weights: Vec<f64> = (0..d * c).map(|_| rng.normal(model_means[k], 1.0)).collect();
        let bias: Vec<f64> = (0..c).map(|_| rng.normal(model_means[k], 1.0)).collect();
        let center: Vec<f64> = (0..d).map(|_| rng.normal(feature_means[k], 1.0)).collect();
        let n = spec.samples_per_client[k];
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut logits = vec![0.0; c];
        for _ in 0..n {
            let start = features.len();
            features.extend((0..d).map(|j| rng.normal(center[j], feature_std[j])));
            let x = &features[start..];
            logits.copy_from_slice(&bias);
            for (j, &xj) in x.iter().enumerate() {
                for (class, logit) in logits.iter_mut().enumerate() {
                    *logit += xj * weights[j * c + class];
                }
            }
            labels.push(argmax(&logits));
        }
        clients.push(SyntheticClient {
            dataset: Dataset::new(features, d, labels, c)?,
            weights,
            bias,
        });
    }
    Ok(clients)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
