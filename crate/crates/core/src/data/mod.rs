//! Datasets, client partitions, and the generators that produce them.

mod csv;
mod partition;
mod synthetic;

pub use self::csv::load_csv;
pub use partition::{
    partition_iid, partition_lda, partition_one_class, partition_power_law, power_law_sizes, train_test_split,
};
pub use synthetic::{generate_synthetic, SyntheticClient, SyntheticSpec};

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid parameter: {0}")]
    InvalidSpec(String),
    #[error("too many clients: {requested} requested but only {available} {unit} available")]
    TooManyClients {
        requested: usize,
        available: usize,
        unit: &'static str,
    },
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column}: cell {value:?} is not numeric")]
    NonNumericCell { row: usize, column: usize, value: String },
    #[error("row {row}: label {value} is not an integer")]
    NonIntegralLabel { row: usize, value: f64 },
}

/// Row-major features with integer class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, n_features: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::InvalidDataset("dataset has no samples".into()));
        }
        if n_features == 0 || n_classes == 0 {
            return Err(DataError::InvalidDataset("n_features and n_classes must be positive".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(DataError::InvalidDataset(format!(
                "{} feature values for {} samples of width {n_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(DataError::InvalidDataset(format!("label {y} at sample {i} >= n_classes {n_classes}")));
        }
        Ok(Self {
            features,
            n_features,
            labels,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Rows at `indices`, in that order. Keeps `n_classes`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self::new(
            features,
            self.n_features,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.n_classes,
        )
    }

    /// Stacks datasets with equal width; `n_classes` is the maximum.
    pub fn concat(parts: &[Dataset]) -> Result<Self, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::InvalidDataset("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.n_features != first.n_features) {
            return Err(DataError::InvalidDataset("feature widths differ".into()));
        }
        Self::new(
            parts.iter().flat_map(|p| p.features.iter().copied()).collect(),
            first.n_features,
            parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            parts.iter().map(|p| p.n_classes).max().unwrap_or(1),
        )
    }

    /// Per-class counts over `indices`.
    pub fn label_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut hist = vec![0; self.n_classes];
        for &i in indices {
            hist[self.labels[i]] += 1;
        }
        hist
    }

    /// Sample indices grouped by class, each group ascending.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }
}

/// Shannon entropy (nats) of a label histogram; 0 for an empty histogram.
pub fn label_entropy(hist: &[usize]) -> f64 {
    let total: usize = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Assignment of sample indices to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    /// Sorts each client's indices and checks the partition covers `0..n_samples`
    /// exactly once with no empty client.
    pub fn new(mut assignments: Vec<Vec<usize>>, n_samples: usize) -> Result<Self, DataError> {
        assignments.iter_mut().for_each(|a| a.sort_unstable());
        let mut seen = vec![false; n_samples];
        for (client, idx) in assignments.iter().enumerate() {
            if idx.is_empty() {
                return Err(DataError::InvalidDataset(format!("client {client} has no samples")));
            }
            for &i in idx {
                if i >= n_samples {
                    return Err(DataError::InvalidDataset(format!("index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(DataError::InvalidDataset(format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(DataError::InvalidDataset(format!("index {missing} unassigned")));
        }
        Ok(Self { assignments })
    }

    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Mean over clients of the label entropy of each client's samples.
    pub fn mean_label_entropy(&self, dataset: &Dataset) -> f64 {
        let total: f64 = self
            .assignments
            .iter()
            .map(|idx| label_entropy(&dataset.label_histogram(idx)))
            .sum();
        total / self.assignments.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_bad_labels_and_shapes() {
        assert!(Dataset::new(vec![1.0, 2.0], 2, vec![3], 3).is_err());
        assert!(Dataset::new(vec![1.0], 2, vec![0], 3).is_err());
        assert!(Dataset::new(vec![], 2, vec![], 3).is_err());
    }

    #[test]
    fn subset_and_histogram() {
        let ds = Dataset::new(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 2, vec![0, 1, 1], 2).unwrap();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.row(0), &[4.0, 5.0]);
        assert_eq!(sub.labels(), &[1, 0]);
        assert_eq!(ds.label_histogram(&[0, 1, 2]), vec![1, 2]);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(label_entropy(&[5, 0, 0]), 0.0);
        assert!((label_entropy(&[1, 1]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn partition_invariants_enforced() {
        assert!(Partition::new(vec![vec![1, 0], vec![2]], 3).is_ok());
        assert!(Partition::new(vec![vec![0], vec![]], 1).is_err());
        assert!(Partition::new(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(Partition::new(vec![vec![0]], 2).is_err());
    }
}
