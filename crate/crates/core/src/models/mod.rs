//! Multinomial logistic regression and a one-hidden-layer MLP with
//! hand-written gradients, plain SGD, and evaluation.

mod gradcheck;
pub mod layers;

pub use gradcheck::{gradient_check, random_instance, GradCheckReport};
pub use layers::Activation;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::FedRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no training data for this client")]
    EmptyClientData,
    #[error("invalid training argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_features: usize,
    pub n_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub l2: f64,
}

impl ModelSpec {
    pub fn logistic_regression(n_features: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            n_features,
            n_classes,
            hidden_dim: None,
            activation: Activation::Tanh,
            l2: 0.0,
        }
    }

    pub fn mlp(n_features: usize, hidden_dim: usize, n_classes: usize, activation: Activation) -> Self {
        Self {
            kind: ModelKind::Mlp,
            n_features,
            n_classes,
            hidden_dim: Some(hidden_dim),
            activation,
            l2: 0.0,
        }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_features == 0 || self.n_classes == 0 {
            return Err(ModelError::InvalidSpec("n_features and n_classes must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(ModelError::InvalidSpec(format!("l2 must be finite and >= 0, got {}", self.l2)));
        }
        match (self.kind, self.hidden_dim) {
            (ModelKind::Mlp, None | Some(0)) => Err(ModelError::InvalidSpec("mlp needs hidden_dim > 0".into())),
            _ => Ok(()),
        }
    }

    /// Hidden width (0 for logistic regression).
    pub fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(0)
    }

    /// Named tensors in concatenation order.
    pub fn shape(&self) -> ParamShape {
        let (d, c) = (self.n_features, self.n_classes);
        let tensors = match self.kind {
            ModelKind::LogisticRegression => vec![
                TensorShape::new("weight", &[d, c]),
                TensorShape::new("bias", &[c]),
            ],
            ModelKind::Mlp => {
                let h = self.hidden();
                vec![
                    TensorShape::new("hidden.weight", &[d, h]),
                    TensorShape::new("hidden.bias", &[h]),
                    TensorShape::new("output.weight", &[h, c]),
                    TensorShape::new("output.bias", &[c]),
                ]
            }
        };
        ParamShape { tensors }
    }

    /// Number of leading parameters held by the client in split training
    /// (the hidden layer); the server holds the rest.
    pub fn split_point(&self) -> usize {
        self.n_features * self.hidden() + self.hidden()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl TensorShape {
    fn new(name: &str, dims: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            dims: dims.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub tensors: Vec<TensorShape>,
}

impl ParamShape {
    pub fn size(&self) -> usize {
        self.tensors.iter().map(TensorShape::size).sum()
    }

    /// Offset range of the named tensor within the flat vector.
    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for t in &self.tensors {
            if t.name == name {
                return Some(start..start + t.size());
            }
            start += t.size();
        }
        None
    }
}

/// Flat parameter vector plus the shape descriptor that names its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    shape: ParamShape,
}

impl ModelParams {
    pub fn new(shape: ParamShape, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != shape.size() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} values for a shape of size {}",
                values.len(),
                shape.size()
            )));
        }
        Ok(Self { values, shape })
    }

    pub fn zeros(shape: ParamShape) -> Self {
        Self {
            values: vec![0.0; shape.size()],
            shape,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shape(&self) -> &ParamShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.shape.range(name).map(|r| &self.values[r])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same shape and identical bit patterns.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Replaces the values, keeping the shape.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(self.shape.clone(), values)
    }
}

/// Feature rows and labels gathered from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn gather(dataset: &Dataset, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * dataset.n_features());
        for &i in indices {
            features.extend_from_slice(dataset.row(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| dataset.label(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Logistic regression starts at zero. MLP weights are drawn from
/// `U(-sqrt(6 / (fan_in + fan_out)), +sqrt(...))` per layer, hidden layer
/// first; biases are zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams, ModelError> {
    spec.validate()?;
    let shape = spec.shape();
    match spec.kind {
        ModelKind::LogisticRegression => Ok(ModelParams::zeros(shape)),
        ModelKind::Mlp => {
            let mut rng = FedRng::new(seed);
            let (d, h, c) = (spec.n_features, spec.hidden(), spec.n_classes);
            let mut values = Vec::with_capacity(shape.size());
            for (fan_in, fan_out) in [(d, h), (h, c)] {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                values.extend((0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)));
                values.extend(std::iter::repeat_n(0.0, fan_out));
            }
            ModelParams::new(shape, values)
        }
    }
}

fn check_params(spec: &ModelSpec, params: &ModelParams) -> Result<(), ModelError> {
    spec.validate()?;
    if params.shape != spec.shape() {
        return Err(ModelError::DimensionMismatch("parameter shape does not match model spec".into()));
    }
    Ok(())
}

fn check_features(spec: &ModelSpec, features: &[f64]) -> Result<usize, ModelError> {
    if !features.len().is_multiple_of(spec.n_features) {
        return Err(ModelError::DimensionMismatch(format!(
            "{} feature values are not a multiple of width {}",
            features.len(),
            spec.n_features
        )));
    }
    Ok(features.len() / spec.n_features)
}

/// Unnormalized class scores, one row per input row.
pub fn logits(spec: &ModelSpec, params: &ModelParams, features: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_params(spec, params)?;
    check_features(spec, features)?;
    let p = params.values();
    Ok(match spec.kind {
        ModelKind::LogisticRegression => {
            let split = spec.n_features * spec.n_classes;
            layers::affine(features, spec.n_features, &p[..split], &p[split..])
        }
        ModelKind::Mlp => {
            let (client, server) = p.split_at(spec.split_point());
            let hidden = mlp_hidden(spec, client, features).1;
            mlp_output_logits(spec, server, &hidden)
        }
    })
}

/// Class probabilities (row-wise softmax of [`logits`]).
pub fn forward(spec: &ModelSpec, params: &ModelParams, features: &[f64]) -> Result<Vec<f64>, ModelError> {
    Ok(layers::softmax(&logits(spec, params, features)?, spec.n_classes))
}

/// Client half of the MLP: returns (pre-activations, activations).
pub fn mlp_hidden(spec: &ModelSpec, client_params: &[f64], features: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = spec.n_features;
    let (weight, bias) = client_params.split_at(d * spec.hidden());
    let pre = layers::affine(features, d, weight, bias);
    let post = layers::activate(spec.activation, &pre);
    (pre, post)
}

/// Server half of the MLP forward pass.
pub fn mlp_output_logits(spec: &ModelSpec, server_params: &[f64], hidden: &[f64]) -> Vec<f64> {
    let h = spec.hidden();
    let (weight, bias) = server_params.split_at(h * spec.n_classes);
    layers::affine(hidden, h, weight, bias)
}

/// Server half of the MLP backward pass on one batch. Returns
/// (data loss + server-side L2 term, gradient of the server parameters,
/// gradient w.r.t. the hidden activations).
pub fn mlp_server_backward(
    spec: &ModelSpec,
    server_params: &[f64],
    hidden: &[f64],
    labels: &[usize],
) -> (f64, Vec<f64>, Vec<f64>) {
    let h = spec.hidden();
    let (weight, _) = server_params.split_at(h * spec.n_classes);
    let logits = mlp_output_logits(spec, server_params, hidden);
    let (ce, resid) = layers::softmax_cross_entropy(&logits, labels, spec.n_classes);
    let mut grad = layers::weight_grad(hidden, h, &resid, weight, spec.l2);
    grad.extend(layers::bias_grad(&resid, spec.n_classes));
    let grad_hidden = layers::input_grad(&resid, weight, h);
    (ce + layers::l2_penalty(weight, spec.l2), grad, grad_hidden)
}

/// Client half of the MLP backward pass. Returns the gradient of the client
/// parameters and the client-side L2 term.
pub fn mlp_client_backward(
    spec: &ModelSpec,
    client_params: &[f64],
    features: &[f64],
    pre: &[f64],
    post: &[f64],
    grad_hidden: &[f64],
) -> (Vec<f64>, f64) {
    let (d, h) = (spec.n_features, spec.hidden());
    let (weight, _) = client_params.split_at(d * h);
    let grad_pre = layers::activation_backward(spec.activation, pre, post, grad_hidden);
    let mut grad = layers::weight_grad(features, d, &grad_pre, weight, spec.l2);
    grad.extend(layers::bias_grad(&grad_pre, h));
    (grad, layers::l2_penalty(weight, spec.l2))
}

/// Mean cross-entropy plus `0.5 * l2 * ||weights||^2` (biases excluded), and
/// its gradient with the same shape as `params`.
pub fn loss_and_gradient(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<(f64, ModelParams), ModelError> {
    check_params(spec, params)?;
    let rows = check_features(spec, &batch.features)?;
    if rows != batch.labels.len() || rows == 0 {
        return Err(ModelError::DimensionMismatch(format!(
            "{rows} feature rows for {} labels",
            batch.labels.len()
        )));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= spec.n_classes) {
        return Err(ModelError::DimensionMismatch(format!("label {y} >= n_classes {}", spec.n_classes)));
    }
    let p = params.values();
    let (loss, grad) = match spec.kind {
        ModelKind::LogisticRegression => {
            let split = spec.n_features * spec.n_classes;
            let (weight, bias) = p.split_at(split);
            let logits = layers::affine(&batch.features, spec.n_features, weight, bias);
            let (ce, resid) = layers::softmax_cross_entropy(&logits, &batch.labels, spec.n_classes);
            let mut grad = layers::weight_grad(&batch.features, spec.n_features, &resid, weight, spec.l2);
            grad.extend(layers::bias_grad(&resid, spec.n_classes));
            (ce + layers::l2_penalty(weight, spec.l2), grad)
        }
        ModelKind::Mlp => {
            let (client, server) = p.split_at(spec.split_point());
            let (pre, post) = mlp_hidden(spec, client, &batch.features);
            let (server_loss, server_grad, grad_hidden) = mlp_server_backward(spec, server, &post, &batch.labels);
            let (mut grad, client_penalty) =
                mlp_client_backward(spec, client, &batch.features, &pre, &post, &grad_hidden);
            grad.extend(server_grad);
            (server_loss + client_penalty, grad)
        }
    };
    Ok((loss, params.with_values(grad)?))
}

/// The batch sequence used by local training: each epoch reshuffles the
/// running order (Fisher–Yates on a stream seeded by `seed`) and cuts it into
/// consecutive batches; the last batch of an epoch may be short.
pub fn batch_schedule(indices: &[usize], epochs: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = FedRng::new(seed);
    let mut order = indices.to_vec();
    let mut batches = Vec::with_capacity(epochs * indices.len().div_ceil(batch_size.max(1)));
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        batches.extend(order.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches
}

pub fn check_training_args(indices: &[usize], epochs: usize, batch_size: usize, lr: f64) -> Result<(), ModelError> {
    if indices.is_empty() {
        return Err(ModelError::EmptyClientData);
    }
    if epochs == 0 {
        return Err(ModelError::InvalidArgument("epochs must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(ModelError::InvalidArgument("batch_size must be at least 1".into()));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(ModelError::InvalidArgument(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

/// Result of [`train_local`]: updated parameters and the mean minibatch loss
/// of the final epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub mean_loss: f64,
}

/// Plain minibatch SGD over `indices` of `dataset`; see [`batch_schedule`].
#[allow(clippy::too_many_arguments)]
pub fn train_local(
    spec: &ModelSpec,
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome, ModelError> {
    check_training_args(indices, epochs, batch_size, lr)?;
    let schedule = batch_schedule(indices, epochs, batch_size, seed);
    let per_epoch = indices.len().div_ceil(batch_size);
    let mut params = params.clone();
    let mut last_epoch_loss = 0.0;
    for (b, batch_indices) in schedule.iter().enumerate() {
        if b % per_epoch == 0 {
            last_epoch_loss = 0.0;
        }
        let batch = Batch::gather(dataset, batch_indices);
        let (loss, grad) = loss_and_gradient(spec, &params, &batch)?;
        layers::sgd_step(params.values_mut(), grad.values(), lr);
        last_epoch_loss += loss;
    }
    Ok(TrainOutcome {
        params,
        mean_loss: last_epoch_loss / per_epoch as f64,
    })
}

/// [`train_local`] returning only the parameters.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    spec: &ModelSpec,
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<ModelParams, ModelError> {
    train_local(spec, params, dataset, indices, epochs, batch_size, lr, seed).map(|o| o.params)
}

/// Mean cross-entropy (no L2 term) and accuracy over a dataset.
/// Predictions are argmax of the logits, ties to the lowest class.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, dataset: &Dataset) -> Result<(f64, f64), ModelError> {
    if dataset.n_features() != spec.n_features {
        return Err(ModelError::DimensionMismatch(format!(
            "dataset width {} vs model width {}",
            dataset.n_features(),
            spec.n_features
        )));
    }
    let all = logits(spec, params, dataset.features())?;
    Ok(score_logits(&all, dataset.labels(), spec.n_classes))
}

/// (mean cross-entropy, accuracy) for precomputed logits.
pub fn score_logits(logits: &[f64], labels: &[usize], n_classes: usize) -> (f64, f64) {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (row, &y) in logits.chunks_exact(n_classes).zip(labels) {
        loss_sum += layers::row_cross_entropy(row, y);
        correct += usize::from(layers::argmax(row) == y);
    }
    let n = labels.len() as f64;
    (loss_sum / n, correct as f64 / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        // 4 points, 2 features, linearly separable by the sign of x0
        Dataset::new(vec![1.0, 0.5, 2.0, -1.0, -1.0, 0.3, -2.0, 1.0], 2, vec![1, 1, 0, 0], 2).unwrap()
    }

    #[test]
    fn logistic_regression_initializes_to_zero() {
        let p = init_params(&ModelSpec::logistic_regression(2, 3), 0).unwrap();
        assert_eq!(p.values(), &[0.0; 9]);
    }

    #[test]
    fn mlp_init_is_deterministic_and_bounded() {
        let spec = ModelSpec::mlp(5, 4, 3, Activation::Tanh);
        let a = init_params(&spec, 3).unwrap();
        assert!(a.bitwise_eq(&init_params(&spec, 3).unwrap()));
        let hidden_bound = (6.0f64 / 9.0).sqrt();
        let output_bound = (6.0f64 / 7.0).sqrt();
        assert!(a.tensor("hidden.weight").unwrap().iter().all(|w| w.abs() <= hidden_bound));
        assert!(a.tensor("output.weight").unwrap().iter().all(|w| w.abs() <= output_bound));
        assert!(a.tensor("hidden.bias").unwrap().iter().all(|&b| b == 0.0));
        assert!(a.tensor("output.bias").unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let spec = ModelSpec::logistic_regression(3, 4);
        let p = init_params(&spec, 0).unwrap();
        let probs = forward(&spec, &p, &[1.0, -2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(probs.iter().all(|&q| q == 0.25));
    }

    #[test]
    fn forward_rejects_bad_width() {
        let spec = ModelSpec::logistic_regression(3, 2);
        let p = init_params(&spec, 0).unwrap();
        assert!(matches!(forward(&spec, &p, &[1.0, 2.0]), Err(ModelError::DimensionMismatch(_))));
    }

    #[test]
    fn forward_survives_huge_logits() {
        let spec = ModelSpec::logistic_regression(1, 2);
        let p = ModelParams::new(spec.shape(), vec![1000.0, 0.0, 0.0, 0.0]).unwrap();
        let probs = forward(&spec, &p, &[1.0]).unwrap();
        assert!((probs[0] - 1.0).abs() < 1e-12 && probs[1] < 1e-12);
    }

    #[test]
    fn balanced_two_class_loss_is_ln2() {
        let spec = ModelSpec::logistic_regression(2, 2);
        let p = init_params(&spec, 0).unwrap();
        let ds = toy_dataset();
        let (loss, _) = loss_and_gradient(&spec, &p, &Batch::gather(&ds, &[0, 1, 2, 3])).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn regularizer_only_gradient() {
        // zero features: data gradient on weights vanishes
        let spec = ModelSpec::logistic_regression(2, 2).with_l2(0.3);
        let p = ModelParams::new(spec.shape(), vec![1.0, -2.0, 0.5, 4.0, 0.0, 0.0]).unwrap();
        let batch = Batch {
            features: vec![0.0; 4],
            labels: vec![0, 1],
        };
        let (_, grad) = loss_and_gradient(&spec, &p, &batch).unwrap();
        let w = p.tensor("weight").unwrap();
        for (g, w) in grad.tensor("weight").unwrap().iter().zip(w) {
            assert_eq!(*g, 0.3 * w);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let spec = ModelSpec::mlp(2, 3, 2, Activation::Tanh);
        let p = init_params(&spec, 1).unwrap();
        let out = local_train(&spec, &p, &toy_dataset(), &[0, 1, 2, 3], 1, 2, 0.0, 5).unwrap();
        assert!(out.bitwise_eq(&p));
    }

    #[test]
    fn training_argument_errors() {
        let spec = ModelSpec::logistic_regression(2, 2);
        let p = init_params(&spec, 0).unwrap();
        let ds = toy_dataset();
        assert_eq!(
            local_train(&spec, &p, &ds, &[], 1, 2, 0.1, 0).unwrap_err(),
            ModelError::EmptyClientData
        );
        assert!(matches!(
            local_train(&spec, &p, &ds, &[0], 0, 2, 0.1, 0),
            Err(ModelError::InvalidArgument(_))
        ));
    }

    #[test]
    fn full_batch_step_matches_gradient() {
        let spec = ModelSpec::logistic_regression(2, 2).with_l2(0.01);
        let p = ModelParams::new(spec.shape(), vec![0.1, -0.2, 0.3, 0.05, 0.0, 0.1]).unwrap();
        let ds = toy_dataset();
        let all = [0, 1, 2, 3];
        let trained = local_train(&spec, &p, &ds, &all, 1, 4, 0.5, 11).unwrap();
        // the full batch is a permutation of the data; gather in the trainer's order
        let order = &batch_schedule(&all, 1, 4, 11)[0];
        let (_, grad) = loss_and_gradient(&spec, &p, &Batch::gather(&ds, order)).unwrap();
        let expected: Vec<f64> = p.values().iter().zip(grad.values()).map(|(w, g)| w - 0.5 * g).collect();
        assert_eq!(trained.values(), expected.as_slice());
    }

    #[test]
    fn training_is_deterministic() {
        let spec = ModelSpec::mlp(2, 3, 2, Activation::Relu);
        let p = init_params(&spec, 2).unwrap();
        let ds = toy_dataset();
        let a = local_train(&spec, &p, &ds, &[0, 1, 2, 3], 3, 3, 0.1, 8).unwrap();
        let b = local_train(&spec, &p, &ds, &[0, 1, 2, 3], 3, 3, 0.1, 8).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn evaluate_tie_breaks_to_class_zero() {
        let spec = ModelSpec::logistic_regression(2, 2);
        let p = init_params(&spec, 0).unwrap();
        let ds = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], 2, vec![0, 0], 2).unwrap();
        assert_eq!(evaluate(&spec, &p, &ds).unwrap().1, 1.0);
    }

    #[test]
    fn separating_params_score_perfectly() {
        // class 1 iff x0 > 0: weight column for class 1 is (+1, 0), class 0 is (-1, 0)
        let spec = ModelSpec::logistic_regression(2, 2);
        let p = ModelParams::new(spec.shape(), vec![-1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(evaluate(&spec, &p, &toy_dataset()).unwrap().1, 1.0);
    }

    #[test]
    fn evaluate_loss_matches_training_loss() {
        let spec = ModelSpec::logistic_regression(2, 2);
        let p = ModelParams::new(spec.shape(), vec![0.3, -0.1, 0.2, 0.4, 0.05, -0.05]).unwrap();
        let ds = toy_dataset();
        let (eval_loss, _) = evaluate(&spec, &p, &ds).unwrap();
        let (train_loss, _) = loss_and_gradient(&spec, &p, &Batch::gather(&ds, &[0, 1, 2, 3])).unwrap();
        assert_eq!(eval_loss.to_bits(), train_loss.to_bits());
    }
}
