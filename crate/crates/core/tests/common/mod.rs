#![allow(dead_code)]

use std::sync::Arc;

use fedsim::algorithms::{AlgorithmKind, Experiment, Plan};
use fedsim::data::{generate_synthetic, partition_iid, Dataset, SyntheticSpec};
use fedsim::models::ModelSpec;

/// Pooled synthetic data: (train, test) with `n_train` / `n_test` rows.
pub fn synthetic(n_features: usize, n_classes: usize, n_train: usize, n_test: usize, seed: u64) -> (Dataset, Dataset) {
    let spec = SyntheticSpec {
        alpha: 0.5,
        beta: 0.5,
        n_clients: 2,
        n_features,
        n_classes,
        samples_per_client: vec![(n_train + n_test).div_ceil(2); 2],
    };
    let parts: Vec<Dataset> = generate_synthetic(&spec, seed).unwrap().into_iter().map(|c| c.dataset).collect();
    let all = Dataset::concat(&parts).unwrap();
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..n_train + n_test).collect();
    (all.subset(&train).unwrap(), all.subset(&test).unwrap())
}

pub fn experiment(kind: AlgorithmKind, model: ModelSpec, n_clients: usize, plan: impl FnOnce(&mut Plan), seed: u64) -> Experiment {
    let (train, test) = synthetic(model.n_features, model.n_classes, 40 * n_clients.max(1), 60, seed);
    let mut p = Plan::new(kind, 2, 1, 8, 0.1, seed);
    plan(&mut p);
    Experiment {
        model,
        partition: partition_iid(train.n_samples(), n_clients.max(1), seed).unwrap(),
        train: Arc::new(train),
        test: Arc::new(test),
        plan: p,
        initial_models: None,
    }
}
