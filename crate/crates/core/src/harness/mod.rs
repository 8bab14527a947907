//! Experiment harness: configuration, data preparation, metrics files, and
//! the diagnostics behind the `fedsim` command line.

mod config;

pub use config::{
    canonical_json, check_party_features, parse_config, parse_config_str, AlgorithmConfig, ConfigError, DatasetConfig,
    Mode, ModelConfig, PartitionConfig, RunConfig, SamplesPerClient, UnknownMessage, DEFAULT_BATCH_SIZE,
    DEFAULT_LOCAL_EPOCHS, DEFAULT_LR, DEFAULT_N_CLASSES, DEFAULT_N_FEATURES, DEFAULT_POWER_LAW_EXPONENT,
    DEFAULT_POWER_LAW_MIN_SAMPLES, DEFAULT_TEST_FRACTION,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{simulate_with_sink, AlgorithmError, AlgorithmKind, Experiment, Plan, RoundResult, RoundSink};
use crate::data::{
    generate_synthetic, label_entropy, load_csv, partition_iid, partition_lda, partition_one_class,
    partition_power_law, train_test_split, DataError, Dataset, Partition, SyntheticSpec,
};
use crate::models::{gradient_check, random_instance, GradCheckReport, ModelSpec};
use crate::rng::{derive_seed, stream};

/// Finite-difference step and pass bound used by [`gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

/// How FedAvg weights client models, recorded in run metadata: by the number
/// of samples each client trained on in the round (its whole shard).
pub const FEDAVG_WEIGHTING: &str = "samples_trained_in_round";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] AlgorithmError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 for bad configuration or inputs, 3 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Run(_) | HarnessError::Output { .. } => 3,
        }
    }
}

/// Loaded data: pooled training and test sets, plus the generating client of
/// each training row (synthetic data only).
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub origin: Option<Vec<usize>>,
}

/// Generates or loads the dataset and splits off the test set.
pub fn prepare_data(config: &RunConfig, base_dir: &Path) -> Result<PreparedData, ConfigError> {
    let seed = config.seed;
    let (pooled, origin) = match &config.dataset {
        DatasetConfig::Synthetic {
            alpha,
            beta,
            n_clients,
            n_features,
            n_classes,
            samples_per_client,
            ..
        } => {
            let sizes = match samples_per_client {
                SamplesPerClient::Same(n) => vec![*n; *n_clients],
                SamplesPerClient::PerClient(list) => list.clone(),
            };
            let spec = SyntheticSpec {
                alpha: *alpha,
                beta: *beta,
                n_clients: *n_clients,
                n_features: *n_features,
                n_classes: *n_classes,
                samples_per_client: sizes.clone(),
            };
            let clients = generate_synthetic(&spec, derive_seed(seed, &[stream::DATA]))?;
            let parts: Vec<Dataset> = clients.into_iter().map(|c| c.dataset).collect();
            let origin: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
            (Dataset::concat(&parts)?, Some(origin))
        }
        DatasetConfig::Csv {
            path,
            label_column,
            has_header,
            ..
        } => {
            let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
            (load_csv(&path, *label_column, *has_header)?, None)
        }
    };
    let (train_idx, test_idx) = train_test_split(
        pooled.n_samples(),
        config.dataset.test_fraction(),
        derive_seed(seed, &[stream::TEST_SPLIT]),
    )?;
    Ok(PreparedData {
        train: pooled.subset(&train_idx)?,
        test: pooled.subset(&test_idx)?,
        origin: origin.map(|o| train_idx.iter().map(|&i| o[i]).collect()),
    })
}

/// Client shards over the training set, per the partition section.
pub fn make_partition(config: &RunConfig, data: &PreparedData) -> Result<Partition, ConfigError> {
    let train = &data.train;
    let seed = derive_seed(config.seed, &[stream::PARTITION]);
    let Some(section) = &config.partition else {
        return Ok(Partition::new(vec![(0..train.n_samples()).collect()], train.n_samples())?);
    };
    let partition = match *section {
        PartitionConfig::Iid { n_clients } => partition_iid(train.n_samples(), n_clients, seed)?,
        PartitionConfig::Lda { n_clients, alpha } => partition_lda(train, n_clients, alpha, seed)?,
        PartitionConfig::PowerLaw {
            n_clients,
            exponent,
            min_samples,
        } => partition_power_law(train, n_clients, exponent, min_samples, seed)?,
        PartitionConfig::OneClass { n_clients } => partition_one_class(train, n_clients)?,
        PartitionConfig::Natural => {
            let origin = data.origin.as_ref().ok_or_else(|| {
                DataError::InvalidSpec("natural partitioning needs synthetic data".into())
            })?;
            let n = origin.iter().max().map_or(0, |m| m + 1);
            let mut shards = vec![Vec::new(); n];
            for (i, &k) in origin.iter().enumerate() {
                shards[k].push(i);
            }
            if let Some(k) = shards.iter().position(Vec::is_empty) {
                return Err(DataError::InvalidDataset(format!(
                    "generating client {k} has no training rows after the test split"
                ))
                .into());
            }
            Partition::new(shards, train.n_samples())?
        }
    };
    Ok(partition)
}

pub fn model_spec(config: &RunConfig, train: &Dataset) -> ModelSpec {
    let m = &config.model;
    ModelSpec {
        kind: m.kind,
        n_features: train.n_features(),
        n_classes: train.n_classes(),
        hidden_dim: m.hidden_dim,
        activation: m.activation,
        l2: m.l2,
    }
}

/// Builds the full experiment a config describes and checks it against the
/// loaded data. Relative data paths resolve against `base_dir`.
pub fn prepare_experiment(config: &RunConfig, base_dir: &Path) -> Result<Experiment, ConfigError> {
    let data = prepare_data(config, base_dir)?;
    let partition = make_partition(config, &data)?;
    let model = model_spec(config, &data.train);
    let a = &config.algorithm;
    if a.kind == AlgorithmKind::Vfl {
        if let Some(parts) = &a.party_features {
            check_party_features(parts, model.n_features)?;
        }
    }
    let plan = Plan {
        clients_per_round: a.clients_per_round,
        aggregator: config.aggregator.clone(),
        attack: config.attack.clone(),
        topology: config.topology.clone(),
        party_features: a.party_features.clone(),
        unknown_tag_policy: config.on_unknown_message.into(),
        ..Plan::new(a.kind, a.rounds, a.local_epochs, a.batch_size, a.lr, config.seed)
    };
    let exp = Experiment {
        model,
        train: Arc::new(data.train),
        test: Arc::new(data.test),
        partition,
        plan,
        initial_models: None,
    };
    exp.validate().map_err(|e| match e {
        AlgorithmError::Data(d) => ConfigError::Data(d),
        other => ConfigError::Plan(other),
    })?;
    Ok(exp)
}

/// One JSONL line per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wallclock_seconds: f64,
    pub aggregator: String,
    pub config_digest: String,
    /// SHA-256 of the little-endian bytes of the round's global parameters.
    pub params_sha256: String,
}

impl MetricsRecord {
    pub fn new(result: &RoundResult, config: &RunConfig, digest: &str) -> Self {
        Self {
            round: result.round,
            train_loss: result.train_loss,
            test_loss: result.test_loss,
            test_accuracy: result.test_accuracy,
            wallclock_seconds: result.wallclock_seconds,
            aggregator: config.aggregator.kind_name().to_string(),
            config_digest: digest.to_string(),
            params_sha256: params_digest(result.global.values()),
        }
    }
}

pub fn params_digest(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Printed after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub best_test_accuracy: f64,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub total_seconds: f64,
    pub config_digest: String,
}

impl RunSummary {
    pub fn from_results(results: &[RoundResult], digest: &str) -> Self {
        let last = results.last();
        Self {
            rounds: results.len(),
            best_test_accuracy: results.iter().map(|r| r.test_accuracy).fold(f64::NAN, f64::max),
            final_test_loss: last.map_or(f64::NAN, |r| r.test_loss),
            final_test_accuracy: last.map_or(f64::NAN, |r| r.test_accuracy),
            total_seconds: last.map_or(0.0, |r| r.wallclock_seconds),
            config_digest: digest.to_string(),
        }
    }
}

/// Run metadata written next to the metrics file as `<output>.meta.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata<'a> {
    pub config_digest: String,
    pub config: &'a RunConfig,
    pub fedavg_weighting: &'static str,
    pub version: &'static str,
}

/// A sink that appends one flushed JSONL line per round, so an interrupted
/// run leaves a valid prefix.
pub fn jsonl_sink<W: Write + Send + 'static>(writer: W, config: &RunConfig) -> RoundSink {
    let digest = config.digest();
    let config = config.clone();
    let mut writer = writer;
    RoundSink::with_callback(move |result| {
        let line = serde_json::to_string(&MetricsRecord::new(result, &config, &digest))?;
        writeln!(writer, "{line}")?;
        writer.flush()?;
        Ok(())
    })
}

/// Opens `path` for a metrics file (truncating) and writes the metadata file.
pub fn open_metrics(path: &Path, config: &RunConfig) -> Result<BufWriter<File>, HarnessError> {
    let out_err = |p: &Path| {
        let p = p.display().to_string();
        move |source| HarnessError::Output { path: p, source }
    };
    let file = File::create(path).map_err(out_err(path))?;
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta.json");
    let meta_path = std::path::PathBuf::from(meta_path);
    let meta = RunMetadata {
        config_digest: config.digest(),
        config,
        fedavg_weighting: FEDAVG_WEIGHTING,
        version: env!("CARGO_PKG_VERSION"),
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&meta_path, text + "\n").map_err(out_err(&meta_path))?;
    Ok(BufWriter::new(file))
}

/// Runs a config in simulate mode, streaming metrics to `writer`.
pub fn run_simulated<W: Write + Send + 'static>(
    config: &RunConfig,
    base_dir: &Path,
    writer: W,
) -> Result<(Vec<RoundResult>, RunSummary), HarnessError> {
    let exp = prepare_experiment(config, base_dir)?;
    let results = simulate_with_sink(&exp, jsonl_sink(writer, config))?;
    let summary = RunSummary::from_results(&results, &config.digest());
    Ok((results, summary))
}

/// Partition statistics for `inspect-partition`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub method: String,
    pub n_samples: usize,
    pub n_clients: usize,
    pub n_classes: usize,
    pub sizes: Vec<usize>,
    pub label_histograms: Vec<Vec<usize>>,
    pub label_entropies: Vec<f64>,
    pub mean_label_entropy: f64,
}

pub fn inspect_partition(config: &RunConfig, base_dir: &Path) -> Result<PartitionReport, ConfigError> {
    let data = prepare_data(config, base_dir)?;
    let partition = make_partition(config, &data)?;
    let histograms: Vec<Vec<usize>> = partition
        .assignments()
        .iter()
        .map(|idx| data.train.label_histogram(idx))
        .collect();
    Ok(PartitionReport {
        method: config.partition.as_ref().map_or("all", |p| p.method_name()).to_string(),
        n_samples: data.train.n_samples(),
        n_clients: partition.n_clients(),
        n_classes: data.train.n_classes(),
        sizes: partition.sizes(),
        label_entropies: histograms.iter().map(|h| label_entropy(h)).collect(),
        mean_label_entropy: partition.mean_label_entropy(&data.train),
        label_histograms: histograms,
    })
}

/// Finite-difference check of a model spec on a random instance of its own
/// dimensions. `corrupt` perturbs one analytic coordinate (negative control).
pub fn gradcheck(spec: &ModelSpec, seed: u64, corrupt: Option<usize>) -> Result<GradCheckReport, ConfigError> {
    spec.validate().map_err(|e| ConfigError::Schema {
        pointer: String::new(),
        message: e.to_string(),
    })?;
    let (spec, params, batch) = random_instance(spec, true, seed);
    gradient_check(&spec, &params, &batch, GRADCHECK_STEP, GRADCHECK_TOLERANCE, corrupt).map_err(|e| {
        ConfigError::Schema {
            pointer: "/corrupt".into(),
            message: e.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(partition: &str, extra: &str) -> RunConfig {
        parse_config_str(&format!(
            r#"{{
            "seed": 3,
            "dataset": {{"kind": "synthetic", "alpha": 0, "beta": 0, "n_clients": 10, "samples_per_client": 100 {extra}}},
            "partition": {partition},
            "model": {{"kind": "logistic_regression"}},
            "algorithm": {{"kind": "fedavg", "rounds": 2}}
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn one_class_histograms_have_single_bin() {
        let c = config(r#"{"method": "one_class", "n_clients": 10}"#, "");
        let report = inspect_partition(&c, Path::new(".")).unwrap();
        assert_eq!(report.sizes.iter().sum::<usize>(), report.n_samples);
        for h in &report.label_histograms {
            assert_eq!(h.iter().filter(|&&n| n > 0).count(), 1);
        }
    }

    #[test]
    fn lda_entropy_ordering() {
        let lo = inspect_partition(&config(r#"{"method": "lda", "n_clients": 10, "alpha": 0.1}"#, ""), Path::new("."));
        let hi = inspect_partition(&config(r#"{"method": "lda", "n_clients": 10, "alpha": 100.0}"#, ""), Path::new("."));
        assert!(lo.unwrap().mean_label_entropy < hi.unwrap().mean_label_entropy);
    }

    #[test]
    fn natural_partition_follows_generating_clients() {
        let c = config(r#"{"method": "natural"}"#, "");
        let exp = prepare_experiment(&c, Path::new(".")).unwrap();
        assert_eq!(exp.n_clients(), 10);
        assert_eq!(exp.partition.sizes().iter().sum::<usize>() + exp.test.n_samples(), 1000);
    }

    #[test]
    fn gradcheck_reports() {
        let lr = gradcheck(&ModelSpec::logistic_regression(3, 2), 1, None).unwrap();
        assert!(lr.pass && lr.max_rel_error < 1e-6);
        let mlp = ModelSpec::mlp(3, 4, 2, crate::models::Activation::Tanh);
        assert!(gradcheck(&mlp, 1, None).unwrap().pass);
        let bad = gradcheck(&mlp, 1, Some(5)).unwrap();
        assert!(!bad.pass);
        assert_eq!(bad.worst_index, 5);
    }

    #[test]
    fn jsonl_is_deterministic_apart_from_wallclock() {
        #[derive(Clone, Default)]
        struct Shared(Arc<std::sync::Mutex<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().write(buf)
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let c = config(r#"{"method": "iid", "n_clients": 4}"#, "");
        let strip = |bytes: Vec<u8>| -> Vec<serde_json::Value> {
            String::from_utf8(bytes)
                .unwrap()
                .lines()
                .map(|l| {
                    let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                    v.as_object_mut().unwrap().remove("wallclock_seconds");
                    v
                })
                .collect()
        };
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let buf = Shared::default();
                run_simulated(&c, Path::new("."), buf.clone()).unwrap();
                let bytes = buf.0.lock().unwrap().clone();
                strip(bytes)
            })
            .collect();
        assert_eq!(runs[0].len(), 2);
        assert_eq!(runs[0], runs[1]);
    }
}
