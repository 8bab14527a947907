use std::cmp::Ordering;

use crate::models::ModelParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("update {index} has a different shape from update 0")]
    ShapeMismatch { index: usize },
    #[error("update {index} has n_samples = 0")]
    ZeroWeight { index: usize },
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub params: ModelParams,
    /// Aggregation weight: samples trained on this round.
    pub n_samples: u64,
}

/// Total order on parameter vectors: lexicographic by `f64::total_cmp`.
pub(crate) fn cmp_values(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

pub(crate) fn check_shapes<'a>(params: impl IntoIterator<Item = &'a ModelParams>) -> Result<(), AggregateError> {
    let mut iter = params.into_iter();
    let first = iter.next().ok_or(AggregateError::EmptyUpdateSet)?;
    for (i, p) in iter.enumerate() {
        if p.shape() != first.shape() {
            return Err(AggregateError::ShapeMismatch { index: i + 1 });
        }
    }
    Ok(())
}

/// Weighted coordinate-wise mean of `points` with weights `weights / sum(weights)`.
///
/// Terms are summed in a canonical order (points sorted by value), so the
/// result does not depend on input order, and the sum is taken relative to
/// the first point: `p0 + sum_k (w_k / W) (p_k - p0)`. Identical inputs thus
/// average to themselves exactly.
pub fn weighted_mean(points: &[&ModelParams], weights: &[f64]) -> Result<ModelParams, AggregateError> {
    check_shapes(points.iter().copied())?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        cmp_values(points[a].values(), points[b].values()).then(weights[a].total_cmp(&weights[b]))
    });
    let total: f64 = order.iter().map(|&k| weights[k]).sum();
    let reference = points[order[0]];
    let mut out = reference.values().to_vec();
    for &k in &order[1..] {
        let coef = weights[k] / total;
        for (o, (&x, &r)) in out.iter_mut().zip(points[k].values().iter().zip(reference.values())) {
            *o += coef * (x - r);
        }
    }
    Ok(reference.with_values(out).expect("same shape"))
}

/// FedAvg: coordinate-wise mean of client models weighted by `n_samples`.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ModelParams, AggregateError> {
    if let Some(index) = updates.iter().position(|u| u.n_samples == 0) {
        return Err(AggregateError::ZeroWeight { index });
    }
    let points: Vec<&ModelParams> = updates.iter().map(|u| &u.params).collect();
    let weights: Vec<f64> = updates.iter().map(|u| u.n_samples as f64).collect();
    weighted_mean(&points, &weights)
}
