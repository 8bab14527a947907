//! Gossip FL: worker `i` holds shard `i`, trains locally, sends its model to
//! its out-neighbors, and mixes what it receives with the topology's mixing
//! weights. Every worker reports to worker 0, which records the rounds.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use super::{
    elapsed_since, model_msg, protocol_error, round_of, tags, weighted_mean, AlgorithmError, Experiment, RoundResult,
    RoundSink,
};
use crate::comm::{HandlerResult, Message, Outbox, Transport, Value, Worker, WorkerId, WorkerManager};
use crate::models::{evaluate, train_local, ModelError, ModelParams};
use crate::topology::{build_topology, TopologyManager, TopologySpec};

/// The run's topology; a ring over all clients when none is configured.
pub fn topology_spec(exp: &Experiment) -> TopologySpec {
    exp.plan.topology.clone().unwrap_or(TopologySpec::Ring {
        n_workers: exp.n_clients(),
    })
}

pub(super) fn validate(exp: &Experiment) -> Result<(TopologyManager, Vec<Vec<f64>>), AlgorithmError> {
    let spec = topology_spec(exp);
    if spec.n_workers() != exp.n_clients() {
        return Err(AlgorithmError::InvalidPlan(format!(
            "topology has {} workers but the partition has {} clients",
            spec.n_workers(),
            exp.n_clients()
        )));
    }
    if (0..exp.n_clients()).any(|k| exp.partition.client(k).is_empty()) {
        return Err(ModelError::EmptyClientData.into());
    }
    if let Some(models) = &exp.initial_models {
        if models.len() != 1 && models.len() != exp.n_clients() {
            return Err(AlgorithmError::InvalidPlan(
                "initial_models must hold one model or one per worker".into(),
            ));
        }
    }
    let topo = build_topology(&spec)?;
    let mixing = topo.mixing_matrix()?;
    Ok((topo, mixing))
}

pub(super) fn worker(
    exp: &Arc<Experiment>,
    transport: Arc<dyn Transport>,
    id: WorkerId,
    sink: &RoundSink,
) -> Result<Box<dyn Worker>, AlgorithmError> {
    let (topo, mixing) = validate(exp)?;
    let state = Peer {
        exp: exp.clone(),
        id,
        params: exp.initial_model(id as usize)?,
        out_neighbors: topo.out_neighbors(id)?.iter().copied().collect(),
        // (neighbor, weight) over in-neighbors and self, ascending
        mix: mixing[id as usize]
            .iter()
            .enumerate()
            .filter(|&(j, &w)| w != 0.0 || j == id as usize)
            .map(|(j, &w)| (j as WorkerId, w))
            .collect(),
        round: 0,
        pending_loss: 0.0,
        inbox: BTreeMap::new(),
        report: (id == 0).then(|| Reporter {
            sink: sink.clone(),
            start: Some(Instant::now()),
            reports: BTreeMap::new(),
        }),
    };
    for &(j, _) in &state.mix {
        if j != id && !topo.in_neighbors(id)?.contains(&j) {
            return Err(protocol_error(id, format!("mixing weight for non-neighbor {j}")));
        }
    }
    let mut w = WorkerManager::new(id, transport, state).with_unknown_tag_policy(exp.plan.unknown_tag_policy);
    w.on_start(|s: &mut Peer, out| s.begin_round(1, out));
    w.register_message_receive_handler(tags::GOSSIP_MODEL, |s: &mut Peer, msg, out| s.on_gossip(msg, out))?;
    if id == 0 {
        w.register_message_receive_handler(tags::METRICS, |s: &mut Peer, msg, out| s.on_metrics(msg, out))?;
    }
    Ok(Box::new(w))
}

struct Peer {
    exp: Arc<Experiment>,
    id: WorkerId,
    params: ModelParams,
    out_neighbors: Vec<WorkerId>,
    mix: Vec<(WorkerId, f64)>,
    round: usize,
    pending_loss: f64,
    /// round -> sender -> locally trained model (own entry included)
    inbox: BTreeMap<usize, BTreeMap<WorkerId, Vec<f64>>>,
    report: Option<Reporter>,
}

struct Reporter {
    sink: RoundSink,
    start: Option<Instant>,
    /// round -> worker -> (model, train loss)
    reports: BTreeMap<usize, BTreeMap<WorkerId, (Vec<f64>, f64)>>,
}

impl Peer {
    fn begin_round(&mut self, round: usize, out: &mut Outbox) -> HandlerResult {
        let exp = self.exp.clone();
        let plan = &exp.plan;
        self.round = round;
        let client = self.id as usize;
        let outcome = train_local(
            &exp.model,
            &self.params,
            &exp.train,
            exp.partition.client(client),
            plan.local_epochs,
            plan.batch_size,
            plan.lr,
            exp.train_seed(round, client),
        )?;
        self.pending_loss = outcome.mean_loss;
        let trained = outcome.params.into_values();
        for &j in &self.out_neighbors {
            out.send(model_msg(tags::GOSSIP_MODEL, self.id, j, round, &trained))?;
        }
        self.inbox.entry(round).or_default().insert(self.id, trained);
        self.try_mix(out)
    }

    fn on_gossip(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let round = round_of(msg)?;
        if round < self.round || round > self.exp.plan.rounds {
            return Err(protocol_error(self.id, format!("gossip for round {round} while in round {}", self.round)).into());
        }
        if !self.mix.iter().any(|&(j, _)| j == msg.sender_id) {
            return Err(protocol_error(self.id, format!("gossip from non-neighbor {}", msg.sender_id)).into());
        }
        let model = msg.f64_vec("model")?;
        if model.len() != self.params.len() {
            return Err(ModelError::DimensionMismatch(format!("gossip model of length {}", model.len())).into());
        }
        self.inbox.entry(round).or_default().insert(msg.sender_id, model.to_vec());
        self.try_mix(out)
    }

    /// Mixes once every in-neighbor's model for the current round is here:
    /// `w_i = sum_j W[i][j] w_j` in ascending `j`.
    fn try_mix(&mut self, out: &mut Outbox) -> HandlerResult {
        let round = self.round;
        let ready = self
            .inbox
            .get(&round)
            .is_some_and(|got| self.mix.iter().all(|(j, _)| got.contains_key(j)));
        if !ready {
            return Ok(());
        }
        let got = self.inbox.remove(&round).unwrap();
        let mut mixed = vec![0.0; self.params.len()];
        for (j, w) in &self.mix {
            for (m, v) in mixed.iter_mut().zip(&got[j]) {
                *m += w * v;
            }
        }
        self.params.values_mut().copy_from_slice(&mixed);
        out.send(
            model_msg(tags::METRICS, self.id, 0, round, &mixed).with("train_loss", Value::Float64(self.pending_loss)),
        )?;
        if round < self.exp.plan.rounds {
            self.begin_round(round + 1, out)?;
        }
        Ok(())
    }

    fn on_metrics(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let exp = self.exp.clone();
        let round = round_of(msg)?;
        let n = exp.n_clients();
        let report = self.report.as_mut().ok_or_else(|| protocol_error(self.id, "metrics sent to non-reporter"))?;
        let entry = report.reports.entry(round).or_default();
        entry.insert(msg.sender_id, (msg.f64_vec("model")?.to_vec(), msg.f64("train_loss")?));
        if entry.len() < n {
            return Ok(());
        }
        let reports = report.reports.remove(&round).unwrap();
        let worker_params = reports
            .values()
            .map(|(m, _)| self.params.with_values(m.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let train_loss = reports.values().map(|(_, l)| l).sum::<f64>() / n as f64;
        let refs: Vec<&ModelParams> = worker_params.iter().collect();
        let global = weighted_mean(&refs, &vec![1.0; n])?;
        let (test_loss, test_accuracy) = evaluate(&exp.model, &global, &exp.test)?;
        report.sink.push(RoundResult {
            round,
            global,
            worker_params,
            train_loss,
            test_loss,
            test_accuracy,
            wallclock_seconds: elapsed_since(&report.start),
        })?;
        if round == exp.plan.rounds {
            out.broadcast_finish(1..n as WorkerId)?;
            out.finish();
        }
        Ok(())
    }
}
