//! Federated training protocols written as message handlers: FedAvg over a
//! star, decentralized gossip FL, split learning, and vertical FL.
//!
//! Each protocol builds one [`WorkerManager`](crate::comm::WorkerManager) per
//! participant. The same workers run under the deterministic simulator or
//! one-per-process over TCP; worker 0 always records the [`RoundResult`]s.

mod aggregate;
mod decentralized;
mod fedavg;
mod split;
mod vfl;

pub use aggregate::{fedavg_aggregate, weighted_mean, AggregateError, ClientUpdate};
pub(crate) use aggregate::{check_shapes, cmp_values};

use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::comm::{
    run_simulation, run_threaded, CommError, HandlerError, InProcessTransport, Message, PeerTable, TcpTransport,
    TraceEntry, Transport, UnknownTagPolicy, Value, Worker, WorkerId,
};
use crate::data::{DataError, Dataset, Partition};
use crate::models::{ModelError, ModelParams, ModelSpec};
use crate::rng::{derive_seed, stream};
use crate::robust::{AggregatorSpec, AttackSpec, RobustError};
use crate::topology::{TopologyError, TopologySpec};

/// Message tags shared by every protocol.
pub mod tags {
    pub const FINISH: u32 = crate::comm::FINISH;
    pub const INIT_MODEL: u32 = 1;
    pub const GLOBAL_MODEL: u32 = 2;
    pub const CLIENT_UPDATE: u32 = 3;
    pub const GOSSIP_MODEL: u32 = 4;
    pub const ACTIVATIONS: u32 = 5;
    pub const GRAD_ACTIVATIONS: u32 = 6;
    pub const PARTIAL_LOGITS: u32 = 7;
    pub const RESIDUALS: u32 = 8;
    pub const METRICS: u32 = 9;
}

#[derive(Debug, thiserror::Error)]
pub enum AlgorithmError {
    #[error(transparent)]
    Comm(CommError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("vertical feature sets overlap on column {0}")]
    FeatureOverlap(usize),
    #[error("vertical feature sets leave a gap: {0}")]
    FeatureGap(String),
    #[error("client {client} sent non-finite parameters in round {round}")]
    NonFiniteUpdate { client: u32, round: usize },
    #[error("protocol violation at worker {worker}: {detail}")]
    Protocol { worker: WorkerId, detail: String },
}

impl From<CommError> for AlgorithmError {
    fn from(err: CommError) -> Self {
        match err {
            CommError::Handler { source, worker } => match source.downcast::<AlgorithmError>() {
                Ok(inner) => *inner,
                Err(source) => AlgorithmError::Comm(CommError::Handler { worker, source }),
            },
            other => AlgorithmError::Comm(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Fedavg,
    Decentralized,
    Split,
    Vfl,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Fedavg => "fedavg",
            AlgorithmKind::Decentralized => "decentralized",
            AlgorithmKind::Split => "split",
            AlgorithmKind::Vfl => "vfl",
        }
    }
}

/// Protocol parameters for one run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub kind: AlgorithmKind,
    pub rounds: usize,
    /// FedAvg only; `None` means every client every round.
    pub clients_per_round: Option<usize>,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub aggregator: AggregatorSpec,
    pub attack: Option<AttackSpec>,
    /// Decentralized only; defaults to a ring over all clients.
    pub topology: Option<TopologySpec>,
    /// VFL only: feature columns held by party A (worker 1) and party B (worker 0).
    pub party_features: Option<[Vec<usize>; 2]>,
    pub unknown_tag_policy: UnknownTagPolicy,
}

impl Plan {
    pub fn new(kind: AlgorithmKind, rounds: usize, local_epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            kind,
            rounds,
            clients_per_round: None,
            local_epochs,
            batch_size,
            lr,
            seed,
            aggregator: AggregatorSpec::Mean,
            attack: None,
            topology: None,
            party_features: None,
            unknown_tag_policy: UnknownTagPolicy::FailFast,
        }
    }
}

/// Everything a worker needs: data, model, partition, and protocol plan.
/// Every process builds the same `Experiment` from the same configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelSpec,
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    /// Client shards over `train`.
    pub partition: Partition,
    pub plan: Plan,
    /// Optional starting models: one shared model (FedAvg, split, VFL) or one
    /// per worker (decentralized). Defaults to `init_params`.
    pub initial_models: Option<Vec<ModelParams>>,
}

impl Experiment {
    pub fn n_clients(&self) -> usize {
        self.partition.n_clients()
    }

    /// Number of workers taking part in the protocol.
    pub fn n_workers(&self) -> usize {
        match self.plan.kind {
            AlgorithmKind::Fedavg | AlgorithmKind::Split => self.n_clients() + 1,
            AlgorithmKind::Decentralized => self.n_clients(),
            AlgorithmKind::Vfl => 2,
        }
    }

    pub fn seed_for(&self, path: &[u64]) -> u64 {
        derive_seed(self.plan.seed, path)
    }

    /// Seed of the local-training stream of `client` in `round`.
    pub fn train_seed(&self, round: usize, client: usize) -> u64 {
        self.seed_for(&[stream::LOCAL_TRAIN, round as u64, client as u64])
    }

    pub(crate) fn initial_model(&self, index: usize) -> Result<ModelParams, AlgorithmError> {
        if let Some(models) = &self.initial_models {
            let model = models
                .get(index)
                .or_else(|| models.first())
                .ok_or_else(|| AlgorithmError::InvalidPlan("initial_models is empty".into()))?;
            if model.shape() != &self.model.shape() {
                return Err(AlgorithmError::InvalidPlan("initial model shape does not match the model".into()));
            }
            return Ok(model.clone());
        }
        Ok(crate::models::init_params(&self.model, self.seed_for(&[stream::INIT]))?)
    }

    /// Checks the plan against the data and model before any worker starts.
    pub fn validate(&self) -> Result<(), AlgorithmError> {
        let plan = &self.plan;
        let invalid = |msg: String| Err(AlgorithmError::InvalidPlan(msg));
        self.model.validate()?;
        if plan.rounds == 0 || plan.local_epochs == 0 || plan.batch_size == 0 {
            return invalid("rounds, local_epochs and batch_size must be at least 1".into());
        }
        if !(plan.lr.is_finite() && plan.lr >= 0.0) {
            return invalid(format!("learning rate must be finite and >= 0, got {}", plan.lr));
        }
        if self.train.n_features() != self.model.n_features || self.test.n_features() != self.model.n_features {
            return invalid("dataset width does not match the model".into());
        }
        match plan.kind {
            AlgorithmKind::Fedavg => fedavg::validate(self),
            AlgorithmKind::Decentralized => decentralized::validate(self).map(|_| ()),
            AlgorithmKind::Split => split::validate(self),
            AlgorithmKind::Vfl => vfl::validate(self).map(|_| ()),
        }
    }
}

/// Metrics and parameters after one round, as recorded by worker 0.
#[derive(Debug, Clone)]
pub struct RoundResult {
    pub round: usize,
    /// Global model; for decentralized runs, the uniform average of all workers.
    pub global: ModelParams,
    /// Per-worker models (decentralized only; empty otherwise).
    pub worker_params: Vec<ModelParams>,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wallclock_seconds: f64,
}

type RoundCallback = Box<dyn FnMut(&RoundResult) -> Result<(), HandlerError> + Send>;

/// Collects round results as worker 0 produces them, optionally forwarding
/// each to a callback (used for incremental metrics files).
#[derive(Clone, Default)]
pub struct RoundSink {
    inner: Arc<Mutex<SinkInner>>,
}

#[derive(Default)]
struct SinkInner {
    results: Vec<RoundResult>,
    callback: Option<RoundCallback>,
}

impl RoundSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_callback<F>(callback: F) -> Self
    where
        F: FnMut(&RoundResult) -> Result<(), HandlerError> + Send + 'static,
    {
        let sink = Self::default();
        sink.inner.lock().unwrap().callback = Some(Box::new(callback));
        sink
    }

    pub(crate) fn push(&self, result: RoundResult) -> Result<(), HandlerError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(cb) = inner.callback.as_mut() {
            cb(&result)?;
        }
        inner.results.push(result);
        Ok(())
    }

    pub fn results(&self) -> Vec<RoundResult> {
        self.inner.lock().unwrap().results.clone()
    }
}

/// Builds the workers for `exp`. With `only = Some(id)` a single worker is
/// built (distributed mode); otherwise all of them.
pub fn build_workers(
    exp: &Arc<Experiment>,
    transport: Arc<dyn Transport>,
    only: Option<WorkerId>,
    sink: &RoundSink,
) -> Result<Vec<Box<dyn Worker>>, AlgorithmError> {
    exp.validate()?;
    let n = exp.n_workers() as WorkerId;
    let ids: Vec<WorkerId> = match only {
        Some(id) if id < n => vec![id],
        Some(id) => {
            return Err(AlgorithmError::InvalidPlan(format!(
                "worker id {id} out of range for {n} workers"
            )))
        }
        None => (0..n).collect(),
    };
    ids.into_iter()
        .map(|id| match exp.plan.kind {
            AlgorithmKind::Fedavg => fedavg::worker(exp, transport.clone(), id, sink),
            AlgorithmKind::Decentralized => decentralized::worker(exp, transport.clone(), id, sink),
            AlgorithmKind::Split => split::worker(exp, transport.clone(), id, sink),
            AlgorithmKind::Vfl => vfl::worker(exp, transport.clone(), id, sink),
        })
        .collect()
}

/// Runs every worker in one thread with the deterministic scheduler.
pub fn simulate(exp: &Experiment) -> Result<Vec<RoundResult>, AlgorithmError> {
    simulate_with_sink(exp, RoundSink::new())
}

pub fn simulate_with_sink(exp: &Experiment, sink: RoundSink) -> Result<Vec<RoundResult>, AlgorithmError> {
    let transport = Arc::new(InProcessTransport::new(exp.n_workers()));
    run_sim(exp, transport, &sink)?;
    Ok(sink.results())
}

/// Simulation that also returns the message delivery trace.
pub fn simulate_traced(exp: &Experiment) -> Result<(Vec<RoundResult>, Vec<TraceEntry>), AlgorithmError> {
    let transport = Arc::new(InProcessTransport::new(exp.n_workers()).with_trace());
    let sink = RoundSink::new();
    run_sim(exp, transport.clone(), &sink)?;
    Ok((sink.results(), transport.trace()))
}

fn run_sim(exp: &Experiment, transport: Arc<InProcessTransport>, sink: &RoundSink) -> Result<(), AlgorithmError> {
    let exp = Arc::new(exp.clone());
    let mut workers = build_workers(&exp, transport, None, sink)?;
    run_simulation(&mut workers)?;
    Ok(())
}

/// Runs every worker on its own thread, each with its own TCP transport on
/// an OS-assigned localhost port.
pub fn run_tcp_localhost(exp: &Experiment, timeout: Duration) -> Result<Vec<RoundResult>, AlgorithmError> {
    run_tcp_localhost_with_sink(exp, timeout, RoundSink::new())
}

pub fn run_tcp_localhost_with_sink(
    exp: &Experiment,
    timeout: Duration,
    sink: RoundSink,
) -> Result<Vec<RoundResult>, AlgorithmError> {
    let exp = Arc::new(exp.clone());
    exp.validate()?;
    let listeners = (0..exp.n_workers())
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CommError::from)?;
    let peers: PeerTable = listeners
        .iter()
        .enumerate()
        .map(|(id, l)| Ok((id as WorkerId, l.local_addr()?)))
        .collect::<Result<_, std::io::Error>>()
        .map_err(CommError::from)?;
    let mut workers = Vec::new();
    for (id, listener) in listeners.into_iter().enumerate() {
        let transport = TcpTransport::from_listener(id as WorkerId, listener, peers.clone())?
            .with_recv_timeout(timeout)
            .with_connect_timeout(timeout);
        workers.extend(build_workers(&exp, Arc::new(transport), Some(id as WorkerId), &sink)?);
    }
    run_threaded(workers)?;
    Ok(sink.results())
}

/// Runs one worker of a distributed run on the given transport and blocks
/// until it finishes. Only worker 0 yields round results.
pub fn run_worker(
    exp: &Experiment,
    worker_id: WorkerId,
    transport: Arc<dyn Transport>,
    sink: &RoundSink,
) -> Result<(), AlgorithmError> {
    let exp = Arc::new(exp.clone());
    for mut worker in build_workers(&exp, transport, Some(worker_id), sink)? {
        worker.run()?;
    }
    Ok(())
}

fn check_kind(exp: &Experiment, kind: AlgorithmKind) -> Result<(), AlgorithmError> {
    if exp.plan.kind != kind {
        return Err(AlgorithmError::InvalidPlan(format!(
            "plan is {}, expected {}",
            exp.plan.kind.name(),
            kind.name()
        )));
    }
    Ok(())
}

pub fn run_fedavg(exp: &Experiment) -> Result<Vec<RoundResult>, AlgorithmError> {
    check_kind(exp, AlgorithmKind::Fedavg)?;
    simulate(exp)
}

pub fn run_decentralized(exp: &Experiment) -> Result<Vec<RoundResult>, AlgorithmError> {
    check_kind(exp, AlgorithmKind::Decentralized)?;
    simulate(exp)
}

pub fn run_split_learning(exp: &Experiment) -> Result<Vec<RoundResult>, AlgorithmError> {
    check_kind(exp, AlgorithmKind::Split)?;
    simulate(exp)
}

pub fn run_vfl(exp: &Experiment) -> Result<Vec<RoundResult>, AlgorithmError> {
    check_kind(exp, AlgorithmKind::Vfl)?;
    simulate(exp)
}

// --- message helpers -------------------------------------------------------

pub(crate) fn protocol_error(worker: WorkerId, detail: impl Into<String>) -> AlgorithmError {
    AlgorithmError::Protocol {
        worker,
        detail: detail.into(),
    }
}

pub(crate) fn round_of(msg: &Message) -> Result<usize, CommError> {
    let r = msg.i64("round")?;
    usize::try_from(r).map_err(|_| CommError::MalformedFrame(format!("negative round {r}")))
}

pub(crate) fn model_msg(tag: u32, from: WorkerId, to: WorkerId, round: usize, model: &[f64]) -> Message {
    Message::new(tag, from, to)
        .with("round", Value::Int64(round as i64))
        .with("model", Value::Float64Vector(model.to_vec()))
}

pub(crate) fn labels_to_bytes(labels: &[usize]) -> Vec<u8> {
    labels.iter().flat_map(|&y| (y as u32).to_le_bytes()).collect()
}

pub(crate) fn labels_from_bytes(bytes: &[u8]) -> Result<Vec<usize>, CommError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(CommError::MalformedFrame("label bytes not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

pub(crate) fn elapsed_since(start: &Option<std::time::Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64())
}
