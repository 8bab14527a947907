//! Split learning for the MLP: clients hold the hidden layer, worker 0
//! holds the output layer. Clients take turns in ascending order each round;
//! the client half is relayed from one client to the next.
//!
//! Per batch the client sends only activations and labels; the server
//! replies with the gradient of the loss w.r.t. those activations. After the
//! last client of a round, the server sends its half to that client, which
//! evaluates the assembled model and reports back.

use std::sync::Arc;
use std::time::Instant;

use super::{
    elapsed_since, labels_from_bytes, labels_to_bytes, model_msg, protocol_error, round_of, tags, AlgorithmError,
    Experiment, RoundResult, RoundSink,
};
use crate::comm::{HandlerResult, Message, Outbox, Transport, Value, Worker, WorkerId, WorkerManager};
use crate::models::{
    batch_schedule, evaluate, layers, mlp_client_backward, mlp_hidden, mlp_server_backward, Batch, ModelError, ModelKind,
    ModelParams,
};

const CONTROL: &str = "control";
const TURN: &str = "turn";
const TURN_DONE: &str = "turn_done";
const EVALUATE: &str = "evaluate";
const EVALUATED: &str = "evaluated";

pub(super) fn validate(exp: &Experiment) -> Result<(), AlgorithmError> {
    if exp.model.kind != ModelKind::Mlp {
        return Err(AlgorithmError::InvalidPlan("split learning needs an mlp model".into()));
    }
    if exp.n_clients() == 0 {
        return Err(AlgorithmError::InvalidPlan("split learning needs at least one client".into()));
    }
    if (0..exp.n_clients()).any(|k| exp.partition.client(k).is_empty()) {
        return Err(ModelError::EmptyClientData.into());
    }
    Ok(())
}

pub(super) fn worker(
    exp: &Arc<Experiment>,
    transport: Arc<dyn Transport>,
    id: WorkerId,
    sink: &RoundSink,
) -> Result<Box<dyn Worker>, AlgorithmError> {
    let init = exp.initial_model(0)?;
    let split = exp.model.split_point();
    let policy = exp.plan.unknown_tag_policy;
    if id == 0 {
        let state = Server {
            exp: exp.clone(),
            sink: sink.clone(),
            params: init.values()[split..].to_vec(),
            round: 1,
            loss_sum: 0.0,
            n_batches: 0,
            start: None,
        };
        let mut w = WorkerManager::new(0, transport, state).with_unknown_tag_policy(policy);
        w.on_start(|s: &mut Server, out| {
            s.start = Some(Instant::now());
            out.send(control(0, 1, 1, TURN))?;
            Ok(())
        });
        w.register_message_receive_handler(tags::ACTIVATIONS, |s: &mut Server, msg, out| s.on_activations(msg, out))?;
        w.register_message_receive_handler(tags::METRICS, |s: &mut Server, msg, out| s.on_metrics(msg, out))?;
        Ok(Box::new(w))
    } else {
        let client = id as usize - 1;
        let state = Client {
            exp: exp.clone(),
            id,
            client,
            // only the first client starts with the initial client half
            params: (client == 0).then(|| init.values()[..split].to_vec()),
            params_round: 1,
            turn: None,
            pending: None,
        };
        let mut w = WorkerManager::new(id, transport, state).with_unknown_tag_policy(policy);
        w.register_message_receive_handler(tags::INIT_MODEL, |s: &mut Client, msg, out| s.on_relay(msg, out))?;
        w.register_message_receive_handler(tags::GLOBAL_MODEL, |s: &mut Client, msg, out| s.on_control(msg, out))?;
        w.register_message_receive_handler(tags::GRAD_ACTIVATIONS, |s: &mut Client, msg, out| s.on_grad(msg, out))?;
        Ok(Box::new(w))
    }
}

fn control(from: WorkerId, to: WorkerId, round: usize, what: &str) -> Message {
    Message::new(if from == 0 { tags::GLOBAL_MODEL } else { tags::METRICS }, from, to)
        .with("round", Value::Int64(round as i64))
        .with(CONTROL, Value::Text(what.into()))
}

struct Server {
    exp: Arc<Experiment>,
    sink: RoundSink,
    params: Vec<f64>,
    round: usize,
    loss_sum: f64,
    n_batches: usize,
    start: Option<Instant>,
}

impl Server {
    fn on_activations(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let spec = &self.exp.model;
        let hidden = msg.f64_vec("activations")?;
        let labels = labels_from_bytes(msg.bytes("labels")?)?;
        if labels.is_empty() || hidden.len() != labels.len() * spec.hidden() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} activations for {} labels",
                hidden.len(),
                labels.len()
            ))
            .into());
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= spec.n_classes) {
            return Err(ModelError::DimensionMismatch(format!("label {y} >= n_classes")).into());
        }
        let (loss, grad, grad_hidden) = mlp_server_backward(spec, &self.params, hidden, &labels);
        layers::sgd_step(&mut self.params, &grad, self.exp.plan.lr);
        self.loss_sum += loss;
        self.n_batches += 1;
        out.send(
            Message::new(tags::GRAD_ACTIVATIONS, 0, msg.sender_id)
                .with("grad_activations", Value::Float64Vector(grad_hidden)),
        )?;
        Ok(())
    }

    fn on_metrics(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let exp = self.exp.clone();
        let round = round_of(msg)?;
        let last = exp.n_clients() as WorkerId;
        if round != self.round || msg.sender_id != last {
            return Err(protocol_error(0, format!("unexpected report from worker {} for round {round}", msg.sender_id)).into());
        }
        match msg.text(CONTROL)? {
            TURN_DONE => {
                out.send(
                    model_msg(tags::GLOBAL_MODEL, 0, last, round, &self.params)
                        .with(CONTROL, Value::Text(EVALUATE.into())),
                )?;
            }
            EVALUATED => {
                let global = ModelParams::new(exp.model.shape(), msg.f64_vec("model")?.to_vec())?;
                self.sink.push(RoundResult {
                    round,
                    global,
                    worker_params: Vec::new(),
                    train_loss: self.loss_sum / self.n_batches.max(1) as f64,
                    test_loss: msg.f64("test_loss")?,
                    test_accuracy: msg.f64("test_accuracy")?,
                    wallclock_seconds: elapsed_since(&self.start),
                })?;
                self.loss_sum = 0.0;
                self.n_batches = 0;
                if round == exp.plan.rounds {
                    out.broadcast_finish(1..=last)?;
                    out.finish();
                } else {
                    self.round += 1;
                    out.send(control(0, 1, self.round, TURN))?;
                }
            }
            other => return Err(protocol_error(0, format!("unknown control {other:?}")).into()),
        }
        Ok(())
    }
}

struct Client {
    exp: Arc<Experiment>,
    id: WorkerId,
    client: usize,
    /// Client half, when this client currently holds it.
    params: Option<Vec<f64>>,
    /// Round the held client half is meant for.
    params_round: usize,
    /// (round, batch schedule, next batch) while taking a turn.
    turn: Option<(usize, Vec<Vec<usize>>, usize)>,
    /// Forward cache of the batch in flight: (features, pre, post).
    pending: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl Client {
    fn is_first(&self) -> bool {
        self.client == 0
    }

    fn is_last(&self) -> bool {
        self.client + 1 == self.exp.n_clients()
    }

    fn on_relay(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let round = round_of(msg)?;
        self.params = Some(msg.f64_vec("model")?.to_vec());
        self.params_round = round;
        if !self.is_first() {
            self.start_turn(round, out)?;
        } else if let Some((r, _, _)) = &self.turn {
            // the go-ahead arrived before the relay
            if *r == round {
                self.start_turn(round, out)?;
            }
        }
        Ok(())
    }

    fn on_control(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let round = round_of(msg)?;
        match msg.text(CONTROL)? {
            TURN if self.is_first() => {
                if self.params.is_some() && self.params_round == round {
                    self.start_turn(round, out)
                } else {
                    // wait for the relay; remember the go-ahead
                    self.turn = Some((round, Vec::new(), 0));
                    Ok(())
                }
            }
            EVALUATE if self.is_last() => self.evaluate(round, msg.f64_vec("model")?, out),
            other => Err(protocol_error(self.id, format!("unexpected control {other:?}")).into()),
        }
    }

    fn start_turn(&mut self, round: usize, out: &mut Outbox) -> HandlerResult {
        let exp = &self.exp;
        let shard = exp.partition.client(self.client);
        let schedule = batch_schedule(
            shard,
            exp.plan.local_epochs,
            exp.plan.batch_size,
            exp.train_seed(round, self.client),
        );
        self.turn = Some((round, schedule, 0));
        self.send_batch(out)
    }

    fn send_batch(&mut self, out: &mut Outbox) -> HandlerResult {
        let (_, schedule, next) = self.turn.as_ref().expect("in a turn");
        let batch = Batch::gather(&self.exp.train, &schedule[*next]);
        let params = self.params.as_ref().ok_or_else(|| protocol_error(self.id, "turn without client half"))?;
        let (pre, post) = mlp_hidden(&self.exp.model, params, &batch.features);
        out.send(
            Message::new(tags::ACTIVATIONS, self.id, 0)
                .with("activations", Value::Float64Vector(post.clone()))
                .with("labels", Value::Bytes(labels_to_bytes(&batch.labels))),
        )?;
        self.pending = Some((batch.features, pre, post));
        Ok(())
    }

    fn on_grad(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let (features, pre, post) = self
            .pending
            .take()
            .ok_or_else(|| protocol_error(self.id, "gradient without a batch in flight"))?;
        let grad_hidden = msg.f64_vec("grad_activations")?;
        if grad_hidden.len() != post.len() {
            return Err(ModelError::DimensionMismatch("gradient length differs from activations".into()).into());
        }
        let params = self.params.as_mut().expect("held during a turn");
        let (grad, _) = mlp_client_backward(&self.exp.model, params, &features, &pre, &post, grad_hidden);
        layers::sgd_step(params, &grad, self.exp.plan.lr);
        let (round, schedule, next) = self.turn.as_mut().expect("in a turn");
        *next += 1;
        if *next < schedule.len() {
            return self.send_batch(out);
        }
        let round = *round;
        self.turn = None;
        if self.is_last() {
            out.send(control(self.id, 0, round, TURN_DONE))?;
        } else {
            let params = self.params.take().unwrap();
            out.send(model_msg(tags::INIT_MODEL, self.id, self.id + 1, round, &params))?;
        }
        Ok(())
    }

    fn evaluate(&mut self, round: usize, server_half: &[f64], out: &mut Outbox) -> HandlerResult {
        let exp = self.exp.clone();
        let mut full = self.params.clone().ok_or_else(|| protocol_error(self.id, "evaluate without client half"))?;
        full.extend_from_slice(server_half);
        let model = ModelParams::new(exp.model.shape(), full)?;
        let (test_loss, test_accuracy) = evaluate(&exp.model, &model, &exp.test)?;
        out.send(
            model_msg(tags::METRICS, self.id, 0, round, model.values())
                .with(CONTROL, Value::Text(EVALUATED.into()))
                .with("test_loss", Value::Float64(test_loss))
                .with("test_accuracy", Value::Float64(test_accuracy)),
        )?;
        if round < exp.plan.rounds {
            let params = self.params.take().unwrap();
            if self.is_first() {
                // single client: keep the half for the next round
                self.params = Some(params);
                self.params_round = round + 1;
            } else {
                out.send(model_msg(tags::INIT_MODEL, self.id, 1, round + 1, &params))?;
            }
        }
        Ok(())
    }
}
