//! FedAvg over a star: worker 0 is the server, worker `k + 1` holds client
//! shard `k`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use super::{
    elapsed_since, model_msg, protocol_error, round_of, tags, AlgorithmError, ClientUpdate, Experiment, RoundResult,
    RoundSink,
};
use crate::comm::{HandlerResult, Message, Outbox, Transport, Value, Worker, WorkerId, WorkerManager};
use crate::data::Dataset;
use crate::models::{evaluate, train_local, ModelError, ModelParams, ModelSpec};
use crate::rng::{stream, FedRng};
use crate::robust::{attack_model_replacement, AttackSource};

pub(super) fn validate(exp: &Experiment) -> Result<(), AlgorithmError> {
    let n = exp.n_clients();
    if n == 0 {
        return Err(AlgorithmError::InvalidPlan("fedavg needs at least one client".into()));
    }
    if (0..n).any(|k| exp.partition.client(k).is_empty()) {
        return Err(ModelError::EmptyClientData.into());
    }
    let m = exp.plan.clients_per_round.unwrap_or(n);
    if m == 0 || m > n {
        return Err(AlgorithmError::InvalidPlan(format!(
            "clients_per_round must be in 1..={n}, got {m}"
        )));
    }
    exp.plan.aggregator.validate(m)?;
    if let Some(attack) = &exp.plan.attack {
        if let Some(id) = attack.attacker_ids.iter().find(|&&id| id as usize >= n) {
            return Err(AlgorithmError::InvalidPlan(format!("attacker id {id} >= n_clients {n}")));
        }
        if !attack.gamma.is_finite() {
            return Err(AlgorithmError::InvalidPlan("attack gamma must be finite".into()));
        }
    }
    Ok(())
}

/// Clients taking part in `round`: a seeded Fisher–Yates draw of
/// `clients_per_round` out of all clients, returned in ascending order.
pub fn sample_clients(exp: &Experiment, round: usize) -> Vec<u32> {
    let n = exp.n_clients();
    let m = exp.plan.clients_per_round.unwrap_or(n);
    let mut ids: Vec<u32> = (0..n as u32).collect();
    if m < n {
        FedRng::new(exp.seed_for(&[stream::SAMPLING, round as u64])).shuffle(&mut ids);
        ids.truncate(m);
        ids.sort_unstable();
    }
    ids
}

pub(super) fn worker(
    exp: &Arc<Experiment>,
    transport: Arc<dyn Transport>,
    id: WorkerId,
    sink: &RoundSink,
) -> Result<Box<dyn Worker>, AlgorithmError> {
    let policy = exp.plan.unknown_tag_policy;
    if id == 0 {
        let state = Server {
            exp: exp.clone(),
            sink: sink.clone(),
            global: exp.initial_model(0)?,
            round: 0,
            received: BTreeMap::new(),
            expected: Vec::new(),
            start: None,
        };
        let mut w = WorkerManager::new(0, transport, state).with_unknown_tag_policy(policy);
        w.on_start(|s: &mut Server, out| s.start(out));
        w.register_message_receive_handler(tags::CLIENT_UPDATE, |s: &mut Server, msg, out| s.on_update(msg, out))?;
        Ok(Box::new(w))
    } else {
        let state = Client {
            exp: exp.clone(),
            client: id as usize - 1,
            flipped: None,
        };
        let mut w = WorkerManager::new(id, transport, state).with_unknown_tag_policy(policy);
        w.register_message_receive_handler(tags::INIT_MODEL, |s: &mut Client, msg, out| s.on_init(msg, out))?;
        w.register_message_receive_handler(tags::GLOBAL_MODEL, |s: &mut Client, msg, out| s.on_global(msg, out))?;
        Ok(Box::new(w))
    }
}

struct Server {
    exp: Arc<Experiment>,
    sink: RoundSink,
    global: ModelParams,
    round: usize,
    expected: Vec<u32>,
    /// client id -> (params, n_samples, train_loss)
    received: BTreeMap<u32, (ModelParams, u64, f64)>,
    start: Option<Instant>,
}

impl Server {
    fn start(&mut self, out: &mut Outbox) -> HandlerResult {
        self.start = Some(Instant::now());
        let shape = serde_json::to_string(&self.exp.model)?;
        for k in 1..=self.exp.n_clients() as WorkerId {
            out.send(Message::new(tags::INIT_MODEL, 0, k).with("model_shape", Value::Text(shape.clone())))?;
        }
        self.begin_round(1, out)
    }

    fn begin_round(&mut self, round: usize, out: &mut Outbox) -> HandlerResult {
        self.round = round;
        self.received.clear();
        self.expected = sample_clients(&self.exp, round);
        for &k in &self.expected {
            out.send(model_msg(tags::GLOBAL_MODEL, 0, k + 1, round, self.global.values()))?;
        }
        Ok(())
    }

    fn on_update(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let round = round_of(msg)?;
        let client = msg.sender_id.wrapping_sub(1);
        if round != self.round || self.expected.binary_search(&client).is_err() {
            return Err(protocol_error(0, format!("unexpected update for round {round} from worker {}", msg.sender_id)).into());
        }
        let params = self.global.with_values(msg.f64_vec("model")?.to_vec())?;
        if !params.is_finite() {
            return Err(AlgorithmError::NonFiniteUpdate { client, round }.into());
        }
        let n_samples = u64::try_from(msg.i64("n_samples")?).map_err(|_| protocol_error(0, "negative n_samples"))?;
        self.received.insert(client, (params, n_samples, msg.f64("train_loss")?));
        if self.received.len() < self.expected.len() {
            return Ok(());
        }
        self.finish_round(out)
    }

    fn finish_round(&mut self, out: &mut Outbox) -> HandlerResult {
        let exp = &self.exp;
        let round = self.round;
        let received = std::mem::take(&mut self.received);
        let total: f64 = received.values().map(|(_, n, _)| *n as f64).sum();
        let train_loss = received.values().map(|(_, n, l)| *n as f64 * l).sum::<f64>() / total;
        let updates: Vec<ClientUpdate> = received
            .into_iter()
            .map(|(client_id, (params, n_samples, _))| ClientUpdate {
                client_id,
                params,
                n_samples,
            })
            .collect();
        let noise_seed = exp.seed_for(&[stream::DP_NOISE, round as u64]);
        self.global = exp.plan.aggregator.aggregate(&updates, &self.global, noise_seed)?;
        let (test_loss, test_accuracy) = evaluate(&exp.model, &self.global, &exp.test)?;
        log::debug!("fedavg round {round}: train {train_loss:.4} test {test_loss:.4} acc {test_accuracy:.4}");
        self.sink.push(RoundResult {
            round,
            global: self.global.clone(),
            worker_params: Vec::new(),
            train_loss,
            test_loss,
            test_accuracy,
            wallclock_seconds: elapsed_since(&self.start),
        })?;
        if round == exp.plan.rounds {
            out.broadcast_finish(1..=exp.n_clients() as WorkerId)?;
            out.finish();
            return Ok(());
        }
        self.begin_round(round + 1, out)
    }
}

struct Client {
    exp: Arc<Experiment>,
    client: usize,
    /// Local shard with shifted labels, built on first use by a label-flip attacker.
    flipped: Option<Dataset>,
}

impl Client {
    fn on_init(&mut self, msg: &Message, _out: &mut Outbox) -> HandlerResult {
        let spec: ModelSpec = serde_json::from_str(msg.text("model_shape")?)?;
        if spec != self.exp.model {
            return Err(protocol_error(self.client as WorkerId + 1, "server model does not match local model").into());
        }
        Ok(())
    }

    fn on_global(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let exp = self.exp.clone();
        let plan = &exp.plan;
        let round = round_of(msg)?;
        let global = ModelParams::new(exp.model.shape(), msg.f64_vec("model")?.to_vec())?;
        let shard = exp.partition.client(self.client);
        let seed = exp.train_seed(round, self.client);
        let train = |data: &Dataset, idx: &[usize]| {
            train_local(&exp.model, &global, data, idx, plan.local_epochs, plan.batch_size, plan.lr, seed)
        };
        let attack = plan
            .attack
            .as_ref()
            .filter(|a| a.attacker_ids.contains(&(self.client as u32)));
        let outcome = match attack {
            None => train(&exp.train, shard)?,
            Some(attack) => {
                let malicious = match attack.source {
                    AttackSource::Constant { value } => {
                        let mut honest = train(&exp.train, shard)?;
                        honest.params = global.with_values(vec![value; global.len()])?;
                        honest
                    }
                    AttackSource::LabelFlip => {
                        if self.flipped.is_none() {
                            self.flipped = Some(flip_labels(&exp.train, shard)?);
                        }
                        let flipped = self.flipped.as_ref().unwrap();
                        let local: Vec<usize> = (0..flipped.n_samples()).collect();
                        train(flipped, &local)?
                    }
                };
                let submitted = attack_model_replacement(&malicious.params, &global, attack.gamma)?;
                crate::models::TrainOutcome {
                    params: submitted,
                    mean_loss: malicious.mean_loss,
                }
            }
        };
        let me = out.worker_id();
        out.send(
            model_msg(tags::CLIENT_UPDATE, me, 0, round, outcome.params.values())
                .with("n_samples", Value::Int64(shard.len() as i64))
                .with("train_loss", Value::Float64(outcome.mean_loss)),
        )?;
        Ok(())
    }
}

/// Copy of the shard rows with every label `y` replaced by `(y + 1) mod C`.
fn flip_labels(data: &Dataset, shard: &[usize]) -> Result<Dataset, AlgorithmError> {
    let sub = data.subset(shard)?;
    let c = sub.n_classes();
    let labels = sub.labels().iter().map(|y| (y + 1) % c).collect();
    Ok(Dataset::new(sub.features().to_vec(), sub.n_features(), labels, c)?)
}
