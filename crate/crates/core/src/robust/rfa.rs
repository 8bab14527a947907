//! Robust federated aggregation: the weighted geometric median
//! `argmin_z sum_k a_k ||z - x_k||` by smoothed Weiszfeld iteration.

use super::{l2_distance, RobustError};
use crate::algorithms::{check_shapes, cmp_values, weighted_mean, AggregateError};
use crate::models::ModelParams;

/// Median estimate plus the objective after every iterate, starting with the
/// weighted-mean initialization.
#[derive(Debug, Clone)]
pub struct RfaTrace {
    pub median: ModelParams,
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn objective(z: &[f64], points: &[&ModelParams], alphas: &[f64]) -> f64 {
    points.iter().zip(alphas).map(|(p, a)| a * l2_distance(z, p.values())).sum()
}

pub fn rfa_with_trace(
    points: &[ModelParams],
    weights: &[f64],
    tol: f64,
    max_iter: usize,
    epsilon: f64,
) -> Result<RfaTrace, RobustError> {
    check_shapes(points)?;
    if weights.len() != points.len() {
        return Err(RobustError::InvalidParameter(format!(
            "{} weights for {} points",
            weights.len(),
            points.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(RobustError::InvalidParameter(format!("weights must be positive, got {w}")));
    }
    // canonical order keeps the result independent of input order
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| cmp_values(points[a].values(), points[b].values()).then(weights[a].total_cmp(&weights[b])));
    let pts: Vec<&ModelParams> = order.iter().map(|&k| &points[k]).collect();
    let total: f64 = order.iter().map(|&k| weights[k]).sum();
    let alphas: Vec<f64> = order.iter().map(|&k| weights[k] / total).collect();

    let mut z = weighted_mean(&pts, &alphas)
        .map_err(|e: AggregateError| RobustError::from(e))?
        .into_values();
    let mut objectives = vec![objective(&z, &pts, &alphas)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let betas: Vec<f64> = pts
            .iter()
            .zip(&alphas)
            .map(|(p, a)| a / l2_distance(&z, p.values()).max(epsilon))
            .collect();
        let beta_sum: f64 = betas.iter().sum();
        let mut next = vec![0.0; z.len()];
        for (p, b) in pts.iter().zip(&betas) {
            for (n, x) in next.iter_mut().zip(p.values()) {
                *n += b * x;
            }
        }
        next.iter_mut().for_each(|n| *n /= beta_sum);
        let step = l2_distance(&next, &z);
        z = next;
        objectives.push(objective(&z, &pts, &alphas));
        if step < tol {
            converged = true;
            break;
        }
    }
    Ok(RfaTrace {
        median: points[0].with_values(z).expect("same shape"),
        objectives,
        iterations,
        converged,
    })
}

/// Smoothed Weiszfeld geometric median, initialized at the weighted mean.
/// Stops when an update moves less than `tol` or after `max_iter` updates.
pub fn rfa_geometric_median(
    points: &[ModelParams],
    weights: &[f64],
    tol: f64,
    max_iter: usize,
    epsilon: f64,
) -> Result<ModelParams, RobustError> {
    rfa_with_trace(points, weights, tol, max_iter, epsilon).map(|t| t.median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    fn pt(x: f64, y: f64) -> ModelParams {
        ModelParams::new(ModelSpec::logistic_regression(1, 1).shape(), vec![x, y]).unwrap()
    }

    #[test]
    fn single_point_is_its_own_median() {
        let p = pt(0.3, -1.7);
        assert!(rfa_geometric_median(std::slice::from_ref(&p), &[2.0], 1e-7, 100, 1e-10)
            .unwrap()
            .bitwise_eq(&p));
    }

    #[test]
    fn square_corners_center() {
        let pts = [pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0), pt(1.0, 1.0)];
        let m = rfa_geometric_median(&pts, &[1.0; 4], 1e-7, 100, 1e-10).unwrap();
        assert!((m.values()[0] - 0.5).abs() <= 1e-7 && (m.values()[1] - 0.5).abs() <= 1e-7);
    }

    #[test]
    fn empty_and_bad_weights() {
        assert!(matches!(
            rfa_geometric_median(&[], &[], 1e-7, 10, 1e-10),
            Err(RobustError::Aggregate(AggregateError::EmptyUpdateSet))
        ));
        assert!(rfa_geometric_median(&[pt(0.0, 0.0)], &[0.0], 1e-7, 10, 1e-10).is_err());
    }

    #[test]
    fn outlier_barely_moves_median() {
        let pts = [pt(0.0, 0.0), pt(0.1, 0.0), pt(0.0, 0.1), pt(0.1, 0.1), pt(1e6, 1e6)];
        let m = rfa_geometric_median(&pts, &[1.0; 5], 1e-9, 1000, 1e-10).unwrap();
        assert!(m.values().iter().all(|v| v.abs() < 0.2), "{:?}", m.values());
    }
}
