//! Krum and Multi-Krum (Blanchard et al., 2017).
//!
//! With `n` updates and at most `f` Byzantine ones, each update is scored by
//! the sum of squared distances to its `n - f - 2` nearest other updates.

use super::{squared_distance, RobustError};
use crate::algorithms::{check_shapes, weighted_mean};
use crate::models::ModelParams;

/// Byzantine-resilience condition, enforced when an aggregator is configured.
pub(super) fn check_krum(n: usize, f: usize) -> Result<(), RobustError> {
    if n < 2 * f + 3 {
        return Err(RobustError::TooFewClients {
            rule: "krum needs n >= 2f + 3",
            n,
            f,
            m: None,
        });
    }
    Ok(())
}

pub(super) fn check_multi_krum(n: usize, f: usize, m: usize) -> Result<(), RobustError> {
    check_krum(n, f)?;
    check_selection(n, f, m)
}

/// The scoring rule itself only needs a nonempty closest set: `n >= f + 3`.
fn check_scorable(n: usize, f: usize) -> Result<(), RobustError> {
    if n < f + 3 {
        return Err(RobustError::TooFewClients {
            rule: "krum scoring needs n - f - 2 >= 1",
            n,
            f,
            m: None,
        });
    }
    Ok(())
}

fn check_selection(n: usize, f: usize, m: usize) -> Result<(), RobustError> {
    check_scorable(n, f)?;
    if m == 0 || m > n - f - 2 {
        return Err(RobustError::TooFewClients {
            rule: "multi_krum needs 1 <= m <= n - f - 2",
            n,
            f,
            m: Some(m),
        });
    }
    Ok(())
}

/// Krum score of every update. Neighbor distances are summed in ascending order.
pub fn krum_scores(updates: &[ModelParams], f: usize) -> Result<Vec<f64>, RobustError> {
    check_shapes(updates)?;
    let n = updates.len();
    check_scorable(n, f)?;
    let closest = n - f - 2;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(updates[i].values(), updates[j].values());
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            others.sort_by(f64::total_cmp);
            others[..closest].iter().sum()
        })
        .collect())
}

/// Index (lowest on ties) and value of the update with the smallest Krum score.
pub fn krum(updates: &[ModelParams], f: usize) -> Result<(usize, ModelParams), RobustError> {
    let scores = krum_scores(updates, f)?;
    let best = (1..scores.len()).fold(0, |best, i| if scores[i] < scores[best] { i } else { best });
    Ok((best, updates[best].clone()))
}

/// Unweighted mean of the `m` lowest-scoring updates (ties by lowest index).
pub fn multi_krum(updates: &[ModelParams], f: usize, m: usize) -> Result<ModelParams, RobustError> {
    check_selection(updates.len(), f, m)?;
    let scores = krum_scores(updates, f)?;
    let mut ranked: Vec<usize> = (0..updates.len()).collect();
    ranked.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let chosen: Vec<&ModelParams> = ranked[..m].iter().map(|&i| &updates[i]).collect();
    Ok(weighted_mean(&chosen, &vec![1.0; m])?)
}
