use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{AlgorithmError, AlgorithmKind};
use crate::comm::UnknownTagPolicy;
use crate::data::DataError;
use crate::models::{Activation, ModelKind};
use crate::robust::{AggregatorSpec, AttackSpec};
use crate::topology::{build_topology, TopologySpec};

pub const DEFAULT_N_FEATURES: usize = 60;
pub const DEFAULT_N_CLASSES: usize = 10;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_LOCAL_EPOCHS: usize = 1;
pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_POWER_LAW_EXPONENT: f64 = 1.0;
pub const DEFAULT_POWER_LAW_MIN_SAMPLES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at {}: {message}", if pointer.is_empty() { "/" } else { pointer.as_str() })]
    Schema { pointer: String, message: String },
    #[error("{first} conflicts with {second}: {message}")]
    CrossField {
        first: String,
        second: String,
        message: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Plan(#[from] AlgorithmError),
}

impl ConfigError {
    fn schema(pointer: &str, message: impl Into<String>) -> Self {
        ConfigError::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    fn cross(first: &str, second: &str, message: impl Into<String>) -> Self {
        ConfigError::CrossField {
            first: first.into(),
            second: second.into(),
            message: message.into(),
        }
    }
}

/// One experiment, as read from a JSON file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Required except for `vfl`, where both parties see every training row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    pub model: ModelConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologySpec>,
    #[serde(default)]
    pub aggregator: AggregatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub on_unknown_message: UnknownMessage,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulate,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownMessage {
    #[default]
    Fail,
    Warn,
}

impl From<UnknownMessage> for UnknownTagPolicy {
    fn from(u: UnknownMessage) -> Self {
        match u {
            UnknownMessage::Fail => UnknownTagPolicy::FailFast,
            UnknownMessage::Warn => UnknownTagPolicy::WarnAndDrop,
        }
    }
}

fn default_n_features() -> usize {
    DEFAULT_N_FEATURES
}
fn default_n_classes() -> usize {
    DEFAULT_N_CLASSES
}
fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}
fn default_local_epochs() -> usize {
    DEFAULT_LOCAL_EPOCHS
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_exponent() -> f64 {
    DEFAULT_POWER_LAW_EXPONENT
}
fn default_min_samples() -> usize {
    DEFAULT_POWER_LAW_MIN_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SamplesPerClient {
    Same(usize),
    PerClient(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated per-client data; `alpha`/`beta` control how much client
    /// models and feature means differ.
    Synthetic {
        alpha: f64,
        beta: f64,
        /// Number of generating clients (the `natural` partition's shards).
        n_clients: usize,
        #[serde(default = "default_n_features")]
        n_features: usize,
        #[serde(default = "default_n_classes")]
        n_classes: usize,
        samples_per_client: SamplesPerClient,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// Numeric CSV; relative paths resolve against the config file's directory.
    Csv {
        path: PathBuf,
        label_column: usize,
        #[serde(default)]
        has_header: bool,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

impl DatasetConfig {
    pub fn test_fraction(&self) -> f64 {
        match self {
            DatasetConfig::Synthetic { test_fraction, .. } | DatasetConfig::Csv { test_fraction, .. } => *test_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    Iid {
        n_clients: usize,
    },
    Lda {
        n_clients: usize,
        alpha: f64,
    },
    PowerLaw {
        n_clients: usize,
        #[serde(default = "default_exponent")]
        exponent: f64,
        #[serde(default = "default_min_samples")]
        min_samples: usize,
    },
    OneClass {
        n_clients: usize,
    },
    /// One shard per generating client of a synthetic dataset.
    Natural,
}

impl PartitionConfig {
    pub fn method_name(&self) -> &'static str {
        match self {
            PartitionConfig::Iid { .. } => "iid",
            PartitionConfig::Lda { .. } => "lda",
            PartitionConfig::PowerLaw { .. } => "power_law",
            PartitionConfig::OneClass { .. } => "one_class",
            PartitionConfig::Natural => "natural",
        }
    }
}

/// Model section: the input and output widths come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    pub rounds: usize,
    /// FedAvg only; filled with the client count when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// VFL only: `[party A columns, party B columns]`; defaults to the first
    /// and second half of the feature columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party_features: Option<[Vec<usize>; 2]>,
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

/// Parses and validates config JSON, filling defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut config: RunConfig = serde_path_to_error::deserialize(de).map_err(|err| {
        let pointer = json_pointer(err.path());
        ConfigError::schema(&pointer, err.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    path.iter()
        .filter_map(|seg| match seg {
            Segment::Seq { index } => Some(index.to_string()),
            Segment::Map { key } => Some(key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { .. } | Segment::Unknown => None,
        })
        .fold(String::new(), |acc, s| acc + "/" + &s)
}

impl RunConfig {
    /// Client count implied by the partition section (the generating client
    /// count for `natural`), if known without loading data.
    pub fn n_clients(&self) -> Option<usize> {
        match self.partition.as_ref()? {
            PartitionConfig::Iid { n_clients }
            | PartitionConfig::Lda { n_clients, .. }
            | PartitionConfig::PowerLaw { n_clients, .. }
            | PartitionConfig::OneClass { n_clients } => Some(*n_clients),
            PartitionConfig::Natural => match &self.dataset {
                DatasetConfig::Synthetic { n_clients, .. } => Some(*n_clients),
                DatasetConfig::Csv { .. } => None,
            },
        }
    }

    /// Single-field range checks, then cross-field checks; fills defaults
    /// that depend on other fields.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        self.validate_fields()?;
        self.validate_cross()
    }

    fn validate_fields(&self) -> Result<(), ConfigError> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                alpha,
                beta,
                n_clients,
                n_features,
                n_classes,
                samples_per_client,
                ..
            } => {
                if !(alpha.is_finite() && *alpha >= 0.0) {
                    return Err(ConfigError::schema("/dataset/alpha", "must be finite and >= 0"));
                }
                if !(beta.is_finite() && *beta >= 0.0) {
                    return Err(ConfigError::schema("/dataset/beta", "must be finite and >= 0"));
                }
                if *n_clients == 0 {
                    return Err(ConfigError::schema("/dataset/n_clients", "must be at least 1"));
                }
                if *n_features == 0 {
                    return Err(ConfigError::schema("/dataset/n_features", "must be at least 1"));
                }
                if *n_classes < 2 {
                    return Err(ConfigError::schema("/dataset/n_classes", "must be at least 2"));
                }
                match samples_per_client {
                    SamplesPerClient::Same(0) => {
                        return Err(ConfigError::schema("/dataset/samples_per_client", "must be positive"));
                    }
                    SamplesPerClient::PerClient(list) => {
                        if let Some(i) = list.iter().position(|&n| n == 0) {
                            return Err(ConfigError::schema(&format!("/dataset/samples_per_client/{i}"), "must be positive"));
                        }
                        if list.len() != *n_clients {
                            return Err(ConfigError::cross(
                                "dataset.samples_per_client",
                                "dataset.n_clients",
                                format!("{} sizes for {n_clients} clients", list.len()),
                            ));
                        }
                    }
                    SamplesPerClient::Same(_) => {}
                }
            }
            DatasetConfig::Csv { .. } => {}
        }
        let tf = self.dataset.test_fraction();
        if !(tf > 0.0 && tf < 1.0) {
            return Err(ConfigError::schema("/dataset/test_fraction", "must lie strictly between 0 and 1"));
        }
        match &self.partition {
            Some(PartitionConfig::Iid { n_clients })
            | Some(PartitionConfig::OneClass { n_clients })
            | Some(PartitionConfig::Lda { n_clients, .. })
            | Some(PartitionConfig::PowerLaw { n_clients, .. })
                if *n_clients == 0 =>
            {
                return Err(ConfigError::schema("/partition/n_clients", "must be at least 1"));
            }
            Some(PartitionConfig::Lda { alpha, .. }) if !(alpha.is_finite() && *alpha > 0.0) => {
                return Err(ConfigError::schema("/partition/alpha", "must be finite and > 0"));
            }
            Some(PartitionConfig::PowerLaw { exponent, min_samples, .. }) => {
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(ConfigError::schema("/partition/exponent", "must be finite and >= 0"));
                }
                if *min_samples == 0 {
                    return Err(ConfigError::schema("/partition/min_samples", "must be at least 1"));
                }
            }
            _ => {}
        }
        let m = &self.model;
        if m.hidden_dim == Some(0) {
            return Err(ConfigError::schema("/model/hidden_dim", "must be at least 1"));
        }
        if !(m.l2.is_finite() && m.l2 >= 0.0) {
            return Err(ConfigError::schema("/model/l2", "must be finite and >= 0"));
        }
        let a = &self.algorithm;
        if a.rounds == 0 {
            return Err(ConfigError::schema("/algorithm/rounds", "must be at least 1"));
        }
        if a.local_epochs == 0 {
            return Err(ConfigError::schema("/algorithm/local_epochs", "must be at least 1"));
        }
        if a.batch_size == 0 {
            return Err(ConfigError::schema("/algorithm/batch_size", "must be at least 1"));
        }
        if !(a.lr.is_finite() && a.lr >= 0.0) {
            return Err(ConfigError::schema("/algorithm/lr", "must be finite and >= 0"));
        }
        if a.clients_per_round == Some(0) {
            return Err(ConfigError::schema("/algorithm/clients_per_round", "must be at least 1"));
        }
        if let Some(attack) = &self.attack {
            if !attack.gamma.is_finite() {
                return Err(ConfigError::schema("/attack/gamma", "must be finite"));
            }
        }
        self.aggregator
            .validate(usize::MAX / 2)
            .map_err(|e| ConfigError::schema("/aggregator", e.to_string()))?;
        Ok(())
    }

    fn validate_cross(&mut self) -> Result<(), ConfigError> {
        let kind = self.algorithm.kind;
        let model_kind = self.model.kind;
        match (model_kind, self.model.hidden_dim) {
            (ModelKind::Mlp, None) => return Err(ConfigError::cross("model.hidden_dim", "model.kind", "mlp needs hidden_dim")),
            (ModelKind::LogisticRegression, Some(_)) => {
                return Err(ConfigError::cross("model.hidden_dim", "model.kind", "logistic_regression has no hidden layer"))
            }
            _ => {}
        }
        match kind {
            AlgorithmKind::Split if model_kind != ModelKind::Mlp => {
                return Err(ConfigError::cross("algorithm.kind", "model.kind", "split learning needs an mlp"));
            }
            AlgorithmKind::Vfl if model_kind != ModelKind::LogisticRegression => {
                return Err(ConfigError::cross("algorithm.kind", "model.kind", "vfl needs logistic_regression"));
            }
            _ => {}
        }
        if kind != AlgorithmKind::Vfl && self.algorithm.party_features.is_some() {
            return Err(ConfigError::cross("algorithm.party_features", "algorithm.kind", "only vfl splits feature columns"));
        }
        if kind != AlgorithmKind::Fedavg {
            if self.algorithm.clients_per_round.is_some() {
                return Err(ConfigError::cross("algorithm.clients_per_round", "algorithm.kind", "client sampling is fedavg-only"));
            }
            if self.aggregator != AggregatorSpec::Mean {
                return Err(ConfigError::cross("aggregator", "algorithm.kind", "robust aggregation is fedavg-only"));
            }
            if self.attack.is_some() {
                return Err(ConfigError::cross("attack", "algorithm.kind", "the replacement attack targets fedavg"));
            }
        }
        if kind != AlgorithmKind::Decentralized {
            if let Some(topo) = &self.topology {
                let star_ok = kind == AlgorithmKind::Fedavg
                    && matches!(topo, TopologySpec::Star { hub_id: 0, .. })
                    && self.n_clients().is_none_or(|n| topo.n_workers() == n + 1);
                if !star_ok {
                    return Err(ConfigError::cross(
                        "topology",
                        "algorithm.kind",
                        format!("{} runs over a star with the server at worker 0 and one worker per client", kind.name()),
                    ));
                }
            }
        }
        if let (DatasetConfig::Csv { .. }, Some(PartitionConfig::Natural)) = (&self.dataset, &self.partition) {
            return Err(ConfigError::cross("partition.method", "dataset.kind", "natural partitioning needs synthetic data"));
        }
        if let (
            DatasetConfig::Synthetic { n_classes, .. },
            Some(PartitionConfig::OneClass { n_clients }),
        ) = (&self.dataset, &self.partition)
        {
            if n_clients > n_classes {
                return Err(ConfigError::cross(
                    "partition.n_clients",
                    "dataset.n_classes",
                    format!("one_class needs n_clients <= n_classes, got {n_clients} > {n_classes}"),
                ));
            }
        }
        if self.partition.is_none() && kind != AlgorithmKind::Vfl {
            return Err(ConfigError::schema("/partition", format!("{} needs a partition section", kind.name())));
        }
        let n_clients = self.n_clients();
        if kind == AlgorithmKind::Fedavg {
            if let Some(n) = n_clients {
                let m = *self.algorithm.clients_per_round.get_or_insert(n);
                if m > n {
                    return Err(ConfigError::cross(
                        "algorithm.clients_per_round",
                        "partition.n_clients",
                        format!("cannot sample {m} of {n} clients"),
                    ));
                }
            }
            if let Some(m) = self.algorithm.clients_per_round {
                self.aggregator
                    .validate(m)
                    .map_err(|e| ConfigError::cross("aggregator", "algorithm.clients_per_round", e.to_string()))?;
            }
            if let (Some(attack), Some(n)) = (&self.attack, n_clients) {
                if let Some(id) = attack.attacker_ids.iter().find(|&&id| id as usize >= n) {
                    return Err(ConfigError::cross(
                        "attack.attacker_ids",
                        "partition.n_clients",
                        format!("attacker {id} is not a client id below {n}"),
                    ));
                }
            }
        }
        if kind == AlgorithmKind::Decentralized {
            let n = n_clients;
            let topo = self.topology.get_or_insert(TopologySpec::Ring {
                n_workers: n.unwrap_or(0),
            });
            if let Some(n) = n {
                if topo.n_workers() != n {
                    return Err(ConfigError::cross(
                        "topology.n_workers",
                        "partition.n_clients",
                        format!("{} workers for {n} clients", topo.n_workers()),
                    ));
                }
            }
            let manager = build_topology(topo).map_err(|e| ConfigError::schema("/topology", e.to_string()))?;
            manager
                .mixing_matrix()
                .map_err(|e| ConfigError::cross("topology", "algorithm.kind", format!("decentralized training: {e}")))?;
        }
        if kind == AlgorithmKind::Vfl {
            if let (Some(parts), DatasetConfig::Synthetic { n_features, .. }) =
                (&self.algorithm.party_features, &self.dataset)
            {
                check_party_features(parts, *n_features)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled),
    /// leaving out `mode` and `output`, which do not change results.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("mode");
            map.remove("output");
        }
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }
}

/// Compact JSON with object keys in sorted order.
pub fn canonical_json(value: &serde_json::Value) -> String {
    // serde_json's default map keeps keys sorted
    serde_json::to_string(value).expect("value serializes")
}

/// Party column sets for VFL: disjoint, nonempty, covering `0..n_features`.
pub fn check_party_features(parts: &[Vec<usize>; 2], n_features: usize) -> Result<(), ConfigError> {
    let mut seen = vec![false; n_features];
    for &j in parts[0].iter().chain(&parts[1]) {
        if j >= n_features {
            return Err(ConfigError::cross(
                "algorithm.party_features",
                "dataset.n_features",
                format!("column {j} out of range for {n_features} features"),
            ));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(AlgorithmError::FeatureOverlap(j).into());
        }
    }
    if let Some(p) = parts.iter().position(Vec::is_empty) {
        let name = ["A", "B"][p];
        return Err(AlgorithmError::FeatureGap(format!("party {name} holds no feature columns")).into());
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(AlgorithmError::FeatureGap(format!("column {j} is held by neither party")).into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"kind": "synthetic", "alpha": 0, "beta": 0, "n_clients": 4, "samples_per_client": 50},
        "partition": {"method": "natural"},
        "model": {"kind": "logistic_regression"},
        "algorithm": {"kind": "fedavg", "rounds": 2}
    }"#;

    fn with(patch: serde_json::Value) -> String {
        let mut base: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        merge(&mut base, patch);
        base.to_string()
    }

    fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
        match (base, patch) {
            (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
                for (k, v) in p {
                    if v.is_null() {
                        b.remove(&k);
                    } else {
                        merge(b.entry(k).or_insert(serde_json::Value::Null), v);
                    }
                }
            }
            (b, p) => *b = p,
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.algorithm.clients_per_round, Some(4));
        assert_eq!(c.algorithm.local_epochs, DEFAULT_LOCAL_EPOCHS);
        assert_eq!(c.algorithm.batch_size, DEFAULT_BATCH_SIZE);
        assert_eq!(c.algorithm.lr, DEFAULT_LR);
        assert_eq!(c.aggregator, AggregatorSpec::Mean);
        assert_eq!(c.mode, Mode::Simulate);
        match c.dataset {
            DatasetConfig::Synthetic {
                n_features,
                n_classes,
                test_fraction,
                ..
            } => assert_eq!((n_features, n_classes, test_fraction), (60, 10, 0.2)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn misspelled_algorithm_names_enum() {
        let err = parse_config_str(&with(serde_json::json!({"algorithm": {"kind": "krumm"}}))).unwrap_err();
        match err {
            ConfigError::Schema { pointer, message } => {
                assert_eq!(pointer, "/algorithm/kind");
                assert!(message.contains("krumm") && message.contains("fedavg"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config_str(&with(serde_json::json!({"algorithm": {"round": 3}}))).unwrap_err();
        assert!(matches!(err, ConfigError::Schema { ref pointer, .. } if pointer == "/algorithm/round"), "{err:?}");
    }

    #[test]
    fn zero_rounds_is_schema_error() {
        let err = parse_config_str(&with(serde_json::json!({"algorithm": {"rounds": 0}}))).unwrap_err();
        assert!(matches!(err, ConfigError::Schema { ref pointer, .. } if pointer == "/algorithm/rounds"));
    }

    #[test]
    fn krum_needs_enough_clients() {
        let err = parse_config_str(&with(serde_json::json!({"aggregator": {"kind": "krum", "f": 1}}))).unwrap_err();
        match err {
            ConfigError::CrossField { first, second, .. } => {
                assert_eq!((first.as_str(), second.as_str()), ("aggregator", "algorithm.clients_per_round"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vfl_party_without_columns() {
        let text = with(serde_json::json!({
            "partition": null,
            "dataset": {"n_features": 4},
            "algorithm": {"kind": "vfl", "party_features": [[], [0, 1, 2, 3]]}
        }));
        let err = parse_config_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Plan(AlgorithmError::FeatureGap(_))), "{err:?}");
    }

    #[test]
    fn disconnected_topology_rejected_for_gossip() {
        let text = with(serde_json::json!({
            "algorithm": {"kind": "decentralized"},
            "topology": {"kind": "custom", "n_workers": 4, "edges": [[0, 1], [1, 0], [2, 3], [3, 2]]}
        }));
        assert!(matches!(parse_config_str(&text), Err(ConfigError::CrossField { .. })));
    }

    #[test]
    fn digest_ignores_layout_and_key_order() {
        let a = parse_config_str(MINIMAL).unwrap();
        let reordered = r#"{"algorithm":{"rounds":2,"kind":"fedavg"},"model":{"kind":"logistic_regression"},
            "partition":{"method":"natural"},
            "dataset":{"samples_per_client":50,"n_clients":4,"beta":0,"alpha":0,"kind":"synthetic"}, "output": "x.jsonl"}"#;
        let b = parse_config_str(reordered).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = parse_config_str(&with(serde_json::json!({"seed": 1}))).unwrap();
        assert_ne!(a.digest(), c.digest());
    }
}
