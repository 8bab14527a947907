use serde::Serialize;

use super::{loss_and_gradient, mlp_hidden, Activation, Batch, ModelError, ModelKind, ModelParams, ModelSpec};
use crate::rng::FedRng;

/// Denominator floor for relative errors, so that coordinates whose true
/// gradient is ~0 are judged on absolute error at this scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_tensor: String,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every coordinate of the analytic gradient against
/// `(L(p + h e_i) - L(p - h e_i)) / 2h`. `corrupt` adds 1.0 to one analytic
/// coordinate, as a negative control.
pub fn gradient_check(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
    step: f64,
    tolerance: f64,
    corrupt: Option<usize>,
) -> Result<GradCheckReport, ModelError> {
    let (_, grad) = loss_and_gradient(spec, params, batch)?;
    let mut analytic = grad.into_values();
    if let Some(i) = corrupt {
        let slot = analytic
            .get_mut(i)
            .ok_or_else(|| ModelError::InvalidArgument(format!("corrupt index {i} out of range")))?;
        *slot += 1.0;
    }
    let mut probe = params.clone();
    let mut worst = (0.0f64, 0usize, 0.0f64);
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe.values()[i];
        probe.values_mut()[i] = original + step;
        let (up, _) = loss_and_gradient(spec, &probe, batch)?;
        probe.values_mut()[i] = original - step;
        let (down, _) = loss_and_gradient(spec, &probe, batch)?;
        probe.values_mut()[i] = original;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(a, numeric);
        if err > worst.0 || i == 0 {
            worst = (err, i, numeric);
        }
    }
    let (max_rel_error, worst_index, numeric) = worst;
    let mut offset = 0;
    let worst_tensor = params
        .shape()
        .tensors
        .iter()
        .find_map(|t| {
            let range = offset..offset + t.size();
            offset = range.end;
            range.contains(&worst_index).then(|| t.name.clone())
        })
        .unwrap_or_default();
    Ok(GradCheckReport {
        n_params: analytic.len(),
        max_rel_error,
        worst_index,
        worst_tensor,
        analytic: analytic.get(worst_index).copied().unwrap_or(0.0),
        numeric,
        tolerance,
        pass: max_rel_error < tolerance,
    })
}

/// A random small instance (every dimension <= 6) for gradient checking.
///
/// `template` fixes the model kind and activation; other dimensions are
/// redrawn unless `keep_dims` is set. ReLU instances are resampled while any
/// hidden pre-activation lies within 1e-3 of the kink.
pub fn random_instance(template: &ModelSpec, keep_dims: bool, seed: u64) -> (ModelSpec, ModelParams, Batch) {
    let mut rng = FedRng::new(seed);
    loop {
        let mut spec = template.clone();
        if !keep_dims {
            spec.n_features = 1 + rng.index(6);
            spec.n_classes = 2 + rng.index(5);
            if spec.kind == ModelKind::Mlp {
                spec.hidden_dim = Some(1 + rng.index(6));
            }
            spec.l2 = if rng.uniform() < 0.5 { 0.0 } else { rng.uniform_range(0.0, 0.5) };
        }
        let shape = spec.shape();
        let values: Vec<f64> = (0..shape.size()).map(|_| rng.normal(0.0, 0.5)).collect();
        let params = ModelParams::new(shape, values).expect("shape-sized values");
        let rows = 1 + rng.index(6);
        let batch = Batch {
            features: (0..rows * spec.n_features).map(|_| rng.standard_normal()).collect(),
            labels: (0..rows).map(|_| rng.index(spec.n_classes)).collect(),
        };
        let near_kink = spec.kind == ModelKind::Mlp
            && spec.activation == Activation::Relu
            && mlp_hidden(&spec, &params.values()[..spec.split_point()], &batch.features)
                .0
                .iter()
                .any(|z| z.abs() < 1e-3);
        if !near_kink {
            return (spec, params, batch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_regression_passes() {
        let (spec, params, batch) = random_instance(&ModelSpec::logistic_regression(3, 2), true, 1);
        let report = gradient_check(&spec, &params, &batch, 1e-5, 1e-6, None).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_located() {
        let (spec, params, batch) = random_instance(&ModelSpec::mlp(3, 4, 2, Activation::Tanh), true, 2);
        let report = gradient_check(&spec, &params, &batch, 1e-5, 1e-6, Some(7)).unwrap();
        assert!(!report.pass);
        assert_eq!(report.worst_index, 7);
        assert_eq!(report.worst_tensor, "hidden.weight");
    }
}
