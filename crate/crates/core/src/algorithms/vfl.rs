//! Two-party vertical FL for logistic regression. Worker 1 (party A) holds
//! some feature columns and their weight rows; worker 0 (party B) holds the
//! remaining columns, their weight rows, the bias, and the labels.
//!
//! Per batch, A sends its partial logits, B completes them, computes the
//! softmax residuals, sends them back, and both update their own weights.
//! Logits are accumulated column by column, A's columns first, so a split at
//! a column boundary reproduces the centralized computation exactly.

use std::sync::Arc;
use std::time::Instant;

use super::{elapsed_since, protocol_error, round_of, tags, AlgorithmError, Experiment, RoundResult, RoundSink};
use crate::comm::{HandlerResult, Message, Outbox, Transport, Value, Worker, WorkerId, WorkerManager};
use crate::data::Dataset;
use crate::models::{batch_schedule, layers, score_logits, ModelError, ModelKind, ModelParams};

const PHASE: &str = "phase";
const EVAL: &str = "eval";

/// Validated column split: `[party A, party B]`, each ascending.
pub fn party_columns(exp: &Experiment) -> Result<[Vec<usize>; 2], AlgorithmError> {
    let d = exp.model.n_features;
    let [mut a, mut b] = match &exp.plan.party_features {
        Some(parts) => parts.clone(),
        None => {
            let k = d / 2;
            [(0..k).collect(), (k..d).collect()]
        }
    };
    a.sort_unstable();
    b.sort_unstable();
    let mut seen = vec![false; d];
    for &j in a.iter().chain(&b) {
        if j >= d {
            return Err(AlgorithmError::InvalidPlan(format!("feature column {j} >= n_features {d}")));
        }
        if seen[j] {
            return Err(AlgorithmError::FeatureOverlap(j));
        }
        seen[j] = true;
    }
    if a.is_empty() || b.is_empty() {
        return Err(AlgorithmError::FeatureGap(format!(
            "party {} holds no feature columns",
            if a.is_empty() { "A" } else { "B" }
        )));
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(AlgorithmError::FeatureGap(format!("column {j} is held by neither party")));
    }
    Ok([a, b])
}

pub(super) fn validate(exp: &Experiment) -> Result<[Vec<usize>; 2], AlgorithmError> {
    if exp.model.kind != ModelKind::LogisticRegression {
        return Err(AlgorithmError::InvalidPlan("vertical FL needs a logistic_regression model".into()));
    }
    if exp.train.n_samples() == 0 {
        return Err(ModelError::EmptyClientData.into());
    }
    party_columns(exp)
}

/// Columns `cols` of every row, row-major.
fn columns(data: &Dataset, cols: &[usize]) -> Vec<f64> {
    (0..data.n_samples())
        .flat_map(|i| {
            let row = data.row(i);
            cols.iter().map(move |&j| row[j])
        })
        .collect()
}

/// Weight rows for `cols` taken from a full `d x C` weight matrix.
fn weight_rows(full: &[f64], cols: &[usize], c: usize) -> Vec<f64> {
    cols.iter().flat_map(|&j| full[j * c..(j + 1) * c].iter().copied()).collect()
}

fn gather_rows(x: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    rows.iter().flat_map(|&r| x[r * width..(r + 1) * width].iter().copied()).collect()
}

/// Batch schedule over all training rows for `round`; both parties derive it
/// from the shared seed.
fn schedule(exp: &Experiment, round: usize) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..exp.train.n_samples()).collect();
    batch_schedule(&all, exp.plan.local_epochs, exp.plan.batch_size, exp.train_seed(round, 0))
}

pub(super) fn worker(
    exp: &Arc<Experiment>,
    transport: Arc<dyn Transport>,
    id: WorkerId,
    sink: &RoundSink,
) -> Result<Box<dyn Worker>, AlgorithmError> {
    let [cols_a, cols_b] = validate(exp)?;
    let c = exp.model.n_classes;
    let init = exp.initial_model(0)?;
    let (init_w, init_b) = init.values().split_at(exp.model.n_features * c);
    let policy = exp.plan.unknown_tag_policy;
    if id == 0 {
        let state = LabelParty {
            exp: exp.clone(),
            sink: sink.clone(),
            x_train: columns(&exp.train, &cols_b),
            x_test: columns(&exp.test, &cols_b),
            weight: weight_rows(init_w, &cols_b, c),
            bias: init_b.to_vec(),
            cols_a,
            cols_b,
            round: 1,
            schedule: schedule(exp, 1),
            next: 0,
            loss_sum: 0.0,
            peer_weight: None,
            start: None,
        };
        let mut w = WorkerManager::new(0, transport, state).with_unknown_tag_policy(policy);
        w.on_start(|s: &mut LabelParty, _| {
            s.start = Some(Instant::now());
            Ok(())
        });
        w.register_message_receive_handler(tags::PARTIAL_LOGITS, |s: &mut LabelParty, msg, out| {
            s.on_partial(msg, out)
        })?;
        w.register_message_receive_handler(tags::METRICS, |s: &mut LabelParty, msg, _| s.on_metrics(msg))?;
        Ok(Box::new(w))
    } else {
        let state = FeatureParty {
            exp: exp.clone(),
            width: cols_a.len(),
            x_train: columns(&exp.train, &cols_a),
            x_test: columns(&exp.test, &cols_a),
            weight: weight_rows(init_w, &cols_a, c),
            round: 1,
            schedule: Vec::new(),
            next: 0,
        };
        let mut w = WorkerManager::new(id, transport, state).with_unknown_tag_policy(policy);
        w.on_start(|s: &mut FeatureParty, out| s.begin_round(1, out));
        w.register_message_receive_handler(tags::RESIDUALS, |s: &mut FeatureParty, msg, out| s.on_residuals(msg, out))?;
        Ok(Box::new(w))
    }
}

struct FeatureParty {
    exp: Arc<Experiment>,
    width: usize,
    x_train: Vec<f64>,
    x_test: Vec<f64>,
    weight: Vec<f64>,
    round: usize,
    schedule: Vec<Vec<usize>>,
    next: usize,
}

impl FeatureParty {
    fn partial(&self, x: &[f64]) -> Vec<f64> {
        let c = self.exp.model.n_classes;
        let mut acc = vec![0.0; x.len() / self.width * c];
        layers::accumulate(&mut acc, x, self.width, &self.weight, c);
        acc
    }

    fn begin_round(&mut self, round: usize, out: &mut Outbox) -> HandlerResult {
        self.round = round;
        self.schedule = schedule(&self.exp, round);
        self.next = 0;
        self.send_batch(out)
    }

    fn send_batch(&mut self, out: &mut Outbox) -> HandlerResult {
        let x = gather_rows(&self.x_train, self.width, &self.schedule[self.next]);
        out.send(
            Message::new(tags::PARTIAL_LOGITS, 1, 0)
                .with("round", Value::Int64(self.round as i64))
                .with("partial_logits", Value::Float64Vector(self.partial(&x))),
        )?;
        Ok(())
    }

    fn on_residuals(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let resid = msg.f64_vec("residuals")?;
        let rows = &self.schedule[self.next];
        if resid.len() != rows.len() * self.exp.model.n_classes {
            return Err(ModelError::DimensionMismatch(format!("{} residuals for {} rows", resid.len(), rows.len())).into());
        }
        let x = gather_rows(&self.x_train, self.width, rows);
        let grad = layers::weight_grad(&x, self.width, resid, &self.weight, self.exp.model.l2);
        layers::sgd_step(&mut self.weight, &grad, self.exp.plan.lr);
        self.next += 1;
        if self.next < self.schedule.len() {
            return self.send_batch(out);
        }
        let round = self.round;
        out.send(
            Message::new(tags::METRICS, 1, 0)
                .with("round", Value::Int64(round as i64))
                .with("weights", Value::Float64Vector(self.weight.clone())),
        )?;
        out.send(
            Message::new(tags::PARTIAL_LOGITS, 1, 0)
                .with("round", Value::Int64(round as i64))
                .with(PHASE, Value::Text(EVAL.into()))
                .with("partial_logits", Value::Float64Vector(self.partial(&self.x_test))),
        )?;
        if round < self.exp.plan.rounds {
            self.begin_round(round + 1, out)?;
        }
        Ok(())
    }
}

struct LabelParty {
    exp: Arc<Experiment>,
    sink: RoundSink,
    x_train: Vec<f64>,
    x_test: Vec<f64>,
    weight: Vec<f64>,
    bias: Vec<f64>,
    cols_a: Vec<usize>,
    cols_b: Vec<usize>,
    round: usize,
    schedule: Vec<Vec<usize>>,
    next: usize,
    loss_sum: f64,
    peer_weight: Option<Vec<f64>>,
    start: Option<Instant>,
}

impl LabelParty {
    /// Adds this party's columns and the bias to A's partial logits.
    fn complete(&self, mut logits: Vec<f64>, x: &[f64]) -> Vec<f64> {
        let c = self.exp.model.n_classes;
        layers::accumulate(&mut logits, x, self.cols_b.len(), &self.weight, c);
        layers::add_bias(&mut logits, &self.bias);
        logits
    }

    fn on_partial(&mut self, msg: &Message, out: &mut Outbox) -> HandlerResult {
        let round = round_of(msg)?;
        if round != self.round {
            return Err(protocol_error(0, format!("partial logits for round {round} during round {}", self.round)).into());
        }
        if msg.get(PHASE).is_some() {
            return self.on_eval(msg.f64_vec("partial_logits")?.to_vec(), out);
        }
        let exp = self.exp.clone();
        let c = exp.model.n_classes;
        let rows = self
            .schedule
            .get(self.next)
            .ok_or_else(|| protocol_error(0, "more batches than scheduled"))?
            .clone();
        let partial = msg.f64_vec("partial_logits")?;
        if partial.len() != rows.len() * c {
            return Err(ModelError::DimensionMismatch(format!("{} partial logits for {} rows", partial.len(), rows.len())).into());
        }
        let width = self.cols_b.len();
        let x = gather_rows(&self.x_train, width, &rows);
        let logits = self.complete(partial.to_vec(), &x);
        let labels: Vec<usize> = rows.iter().map(|&r| exp.train.label(r)).collect();
        let (ce, resid) = layers::softmax_cross_entropy(&logits, &labels, c);
        out.send(Message::new(tags::RESIDUALS, 0, 1).with("residuals", Value::Float64Vector(resid.clone())))?;
        let grad = layers::weight_grad(&x, width, &resid, &self.weight, exp.model.l2);
        let bias_grad = layers::bias_grad(&resid, c);
        self.loss_sum += ce + layers::l2_penalty(&self.weight, exp.model.l2);
        layers::sgd_step(&mut self.weight, &grad, exp.plan.lr);
        layers::sgd_step(&mut self.bias, &bias_grad, exp.plan.lr);
        self.next += 1;
        Ok(())
    }

    fn on_metrics(&mut self, msg: &Message) -> HandlerResult {
        if round_of(msg)? != self.round {
            return Err(protocol_error(0, "weights reported for the wrong round").into());
        }
        self.peer_weight = Some(msg.f64_vec("weights")?.to_vec());
        Ok(())
    }

    fn on_eval(&mut self, partial: Vec<f64>, out: &mut Outbox) -> HandlerResult {
        let exp = self.exp.clone();
        let c = exp.model.n_classes;
        if self.next != self.schedule.len() {
            return Err(protocol_error(0, "evaluation before the round's batches finished").into());
        }
        if partial.len() != exp.test.n_samples() * c {
            return Err(ModelError::DimensionMismatch("test partial logits of wrong length".into()).into());
        }
        let peer = self.peer_weight.take().ok_or_else(|| protocol_error(0, "evaluation before weights"))?;
        let logits = self.complete(partial, &self.x_test);
        let (test_loss, test_accuracy) = score_logits(&logits, exp.test.labels(), c);
        let d = exp.model.n_features;
        let mut full = vec![0.0; d * c + c];
        for (cols, w) in [(&self.cols_a, &peer), (&self.cols_b, &self.weight)] {
            for (row, &j) in cols.iter().enumerate() {
                full[j * c..(j + 1) * c].copy_from_slice(&w[row * c..(row + 1) * c]);
            }
        }
        full[d * c..].copy_from_slice(&self.bias);
        let round = self.round;
        self.sink.push(RoundResult {
            round,
            global: ModelParams::new(exp.model.shape(), full)?,
            worker_params: Vec::new(),
            train_loss: self.loss_sum / self.schedule.len() as f64,
            test_loss,
            test_accuracy,
            wallclock_seconds: elapsed_since(&self.start),
        })?;
        if round == exp.plan.rounds {
            out.broadcast_finish([1])?;
            out.finish();
        } else {
            self.round += 1;
            self.schedule = schedule(&exp, self.round);
            self.next = 0;
            self.loss_sum = 0.0;
        }
        Ok(())
    }
}
