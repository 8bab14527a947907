//! Robust aggregation and the model-replacement attack.
//!
//! Aggregators: plain mean, norm-difference clipping, weak DP (clip, average,
//! then Gaussian noise on the aggregate), RFA (smoothed Weiszfeld geometric
//! median), Krum and Multi-Krum. Ties are broken toward the lowest index
//! everywhere.

mod krum;
mod rfa;

pub use krum::{krum, krum_scores, multi_krum};
pub use rfa::{rfa_geometric_median, rfa_with_trace, RfaTrace};

use serde::{Deserialize, Serialize};

use crate::algorithms::{check_shapes, fedavg_aggregate, AggregateError, ClientUpdate};
use crate::models::ModelParams;
use crate::rng::FedRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RobustError {
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("{rule}: n = {n}, f = {f}, m = {m:?}")]
    TooFewClients {
        rule: &'static str,
        n: usize,
        f: usize,
        m: Option<usize>,
    },
    #[error("invalid aggregator parameter: {0}")]
    InvalidParameter(String),
}

fn shape_mismatch() -> RobustError {
    RobustError::Aggregate(AggregateError::ShapeMismatch { index: 1 })
}

/// `sqrt(sum_i (a_i - b_i)^2)`.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scales the difference `update - global` down to L2 norm at most `bound`.
/// Updates already within the bound are returned unchanged.
pub fn clip_update(update: &ModelParams, global: &ModelParams, bound: f64) -> Result<ModelParams, RobustError> {
    if update.shape() != global.shape() {
        return Err(shape_mismatch());
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(RobustError::InvalidParameter(format!("clip bound must be positive, got {bound}")));
    }
    let norm = l2_distance(update.values(), global.values());
    if norm <= bound {
        return Ok(update.clone());
    }
    let scale = bound / norm;
    let values = update
        .values()
        .iter()
        .zip(global.values())
        .map(|(u, g)| g + (u - g) * scale)
        .collect();
    Ok(update.with_values(values).expect("same shape"))
}

fn clip_all(updates: &[ClientUpdate], global: &ModelParams, bound: f64) -> Result<Vec<ClientUpdate>, RobustError> {
    updates
        .iter()
        .map(|u| {
            Ok(ClientUpdate {
                params: clip_update(&u.params, global, bound)?,
                ..u.clone()
            })
        })
        .collect()
}

/// Clips every update against `global`, takes the FedAvg mean, and adds
/// i.i.d. `N(0, sigma^2)` noise to each coordinate of the result.
pub fn weak_dp_aggregate(
    updates: &[ClientUpdate],
    global: &ModelParams,
    bound: f64,
    sigma: f64,
    seed: u64,
) -> Result<ModelParams, RobustError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(RobustError::InvalidParameter(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let mut out = fedavg_aggregate(&clip_all(updates, global, bound)?)?;
    if sigma > 0.0 {
        let mut rng = FedRng::new(seed);
        out.values_mut().iter_mut().for_each(|v| *v += sigma * rng.standard_normal());
    }
    Ok(out)
}

/// Returns `gamma * (malicious - global) + global`. Submitted by one of `n`
/// equally weighted clients with `gamma = n` while the others send `global`,
/// the FedAvg result is exactly `malicious`.
pub fn attack_model_replacement(
    malicious: &ModelParams,
    global: &ModelParams,
    gamma: f64,
) -> Result<ModelParams, RobustError> {
    if malicious.shape() != global.shape() {
        return Err(shape_mismatch());
    }
    let values = malicious
        .values()
        .iter()
        .zip(global.values())
        .map(|(m, g)| gamma * (m - g) + g)
        .collect();
    Ok(malicious.with_values(values).expect("same shape"))
}

fn default_rfa_tol() -> f64 {
    1e-7
}

fn default_rfa_max_iter() -> usize {
    100
}

fn default_rfa_epsilon() -> f64 {
    1e-10
}

/// Aggregation strategy applied by the FedAvg server each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorSpec {
    #[default]
    Mean,
    Clip {
        #[serde(rename = "C")]
        bound: f64,
    },
    WeakDp {
        #[serde(rename = "C")]
        bound: f64,
        sigma: f64,
    },
    Rfa {
        #[serde(default = "default_rfa_tol")]
        tol: f64,
        #[serde(default = "default_rfa_max_iter")]
        max_iter: usize,
        #[serde(default = "default_rfa_epsilon")]
        epsilon: f64,
    },
    Krum {
        f: usize,
    },
    MultiKrum {
        f: usize,
        m: usize,
    },
}

impl AggregatorSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AggregatorSpec::Mean => "mean",
            AggregatorSpec::Clip { .. } => "clip",
            AggregatorSpec::WeakDp { .. } => "weak_dp",
            AggregatorSpec::Rfa { .. } => "rfa",
            AggregatorSpec::Krum { .. } => "krum",
            AggregatorSpec::MultiKrum { .. } => "multi_krum",
        }
    }

    /// Checks scalar ranges and, for Krum variants, that `n_updates` per round
    /// satisfies `n >= 2f + 3` (and `m <= n - f - 2`).
    pub fn validate(&self, n_updates: usize) -> Result<(), RobustError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(RobustError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            AggregatorSpec::Mean => Ok(()),
            AggregatorSpec::Clip { bound } => positive("C", bound),
            AggregatorSpec::WeakDp { bound, sigma } => {
                positive("C", bound)?;
                if sigma >= 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(RobustError::InvalidParameter(format!("sigma must be finite and >= 0, got {sigma}")))
                }
            }
            AggregatorSpec::Rfa { tol, max_iter, epsilon } => {
                positive("tol", tol)?;
                positive("epsilon", epsilon)?;
                if max_iter == 0 {
                    return Err(RobustError::InvalidParameter("max_iter must be at least 1".into()));
                }
                Ok(())
            }
            AggregatorSpec::Krum { f } => krum::check_krum(n_updates, f),
            AggregatorSpec::MultiKrum { f, m } => krum::check_multi_krum(n_updates, f, m),
        }
    }

    /// Aggregates one round of updates. `global` is the model the round
    /// started from; `seed` drives the weak-DP noise.
    pub fn aggregate(&self, updates: &[ClientUpdate], global: &ModelParams, seed: u64) -> Result<ModelParams, RobustError> {
        check_shapes(updates.iter().map(|u| &u.params))?;
        if updates[0].params.shape() != global.shape() {
            return Err(shape_mismatch());
        }
        let points = || updates.iter().map(|u| u.params.clone()).collect::<Vec<_>>();
        match *self {
            AggregatorSpec::Mean => Ok(fedavg_aggregate(updates)?),
            AggregatorSpec::Clip { bound } => Ok(fedavg_aggregate(&clip_all(updates, global, bound)?)?),
            AggregatorSpec::WeakDp { bound, sigma } => weak_dp_aggregate(updates, global, bound, sigma, seed),
            AggregatorSpec::Rfa { tol, max_iter, epsilon } => {
                let weights: Vec<f64> = updates.iter().map(|u| u.n_samples as f64).collect();
                rfa_geometric_median(&points(), &weights, tol, max_iter, epsilon)
            }
            AggregatorSpec::Krum { f } => krum(&points(), f).map(|(_, p)| p),
            AggregatorSpec::MultiKrum { f, m } => multi_krum(&points(), f, m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSource {
    /// Every coordinate of the malicious model equals `value`.
    Constant { value: f64 },
    /// The malicious model is trained locally on labels shifted by one class.
    LabelFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub attacker_ids: Vec<u32>,
    pub gamma: f64,
    pub source: AttackSource,
}
