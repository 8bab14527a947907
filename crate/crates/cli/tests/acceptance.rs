//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any of them fails or exceeds its time budget.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fedsim::algorithms::{
    fedavg_aggregate, run_tcp_localhost, simulate, weighted_mean, AlgorithmKind, ClientUpdate, Experiment, Plan,
};
use fedsim::comm::{decode_message, encode_message, InProcessTransport, Message, PeerTable, TcpTransport, Transport, Value};
use fedsim::data::{partition_iid, Dataset};
use fedsim::harness::{parse_config_str, prepare_experiment, MetricsRecord};
use fedsim::models::{gradient_check, init_params, local_train, random_instance, Activation, ModelParams, ModelSpec};
use fedsim::rng::{derive_seed, stream, FedRng};
use fedsim::robust::{
    attack_model_replacement, clip_update, krum, krum_scores, multi_krum, rfa_with_trace, weak_dp_aggregate, AggregatorSpec,
};
use fedsim::topology::TopologySpec;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::json;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, u64);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

fn vector(values: Vec<f64>) -> ModelParams {
    // any even length fits a 1-feature logistic regression shape
    assert!(values.len().is_multiple_of(2));
    ModelParams::new(ModelSpec::logistic_regression(1, values.len() / 2).shape(), values).unwrap()
}

fn random_dataset(rng: &mut FedRng, n: usize, d: usize, c: usize) -> Dataset {
    let features = (0..n * d).map(|_| rng.normal(0.0, 1.0)).collect();
    let labels = (0..n).map(|_| rng.index(c)).collect();
    Dataset::new(features, d, labels, c).unwrap()
}

fn experiment(model: ModelSpec, train: Dataset, n_clients: usize, plan: Plan) -> Experiment {
    let test = train.clone();
    Experiment {
        model,
        partition: partition_iid(train.n_samples(), n_clients, plan.seed).unwrap(),
        train: Arc::new(train),
        test: Arc::new(test),
        plan,
        initial_models: None,
    }
}

fn initial(exp: &Experiment) -> ModelParams {
    init_params(&exp.model, derive_seed(exp.plan.seed, &[stream::INIT])).unwrap()
}

// 1. codec and transport

fn value_strategy() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<f64>().prop_map(Value::Float64),
        any::<i64>().prop_map(Value::Int64),
        vec(any::<f64>(), 0..48).prop_map(Value::Float64Vector),
        any::<String>().prop_map(Value::Text),
        vec(any::<u8>(), 0..48).prop_map(Value::Bytes),
    ]
}

fn message_strategy() -> impl Strategy<Value = Message> {
    (any::<u32>(), any::<u32>(), any::<u32>(), vec((any::<String>(), value_strategy()), 0..8)).prop_map(
        |(t, s, r, params)| {
            let mut m = Message::new(t, s, r);
            for (k, v) in params {
                m.set(k, v);
            }
            m
        },
    )
}

fn same_value(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float64(x), Value::Float64(y)) => x.to_bits() == y.to_bits(),
        (Value::Float64Vector(x), Value::Float64Vector(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        }
        (Value::Int64(x), Value::Int64(y)) => x == y,
        (Value::Text(x), Value::Text(y)) => x == y,
        (Value::Bytes(x), Value::Bytes(y)) => x == y,
        _ => false,
    }
}

fn same_message(a: &Message, b: &Message) -> bool {
    a.msg_type == b.msg_type
        && a.sender_id == b.sender_id
        && a.receiver_id == b.receiver_id
        && a.params().len() == b.params().len()
        && a.params().iter().zip(b.params()).all(|((ka, va), (kb, vb))| ka == kb && same_value(va, vb))
}

fn fifo(transport: &dyn Transport, n: i64) -> Result<(), String> {
    for i in 0..n {
        ok(transport.send(Message::new(3, 0, 1).with("seq", Value::Int64(i))))?;
    }
    for i in 0..n {
        let m = ok(transport.recv(1))?;
        ensure!(ok(m.i64("seq"))? == i, "message {i} arrived out of order");
    }
    Ok(())
}

fn codec_and_transport() -> Check {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    ok(runner.run(&message_strategy(), |m| {
        let back = decode_message(&encode_message(&m).unwrap()).unwrap();
        prop_assert!(same_message(&m, &back));
        Ok(())
    }))?;

    fifo(&InProcessTransport::new(2), 1000)?;
    let listeners: Vec<TcpListener> = (0..2).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    let peers: PeerTable = listeners.iter().enumerate().map(|(i, l)| (i as u32, l.local_addr().unwrap())).collect();
    let mut it = listeners.into_iter();
    let a = ok(TcpTransport::from_listener(0, it.next().unwrap(), peers.clone()))?;
    let b = ok(TcpTransport::from_listener(1, it.next().unwrap(), peers))?.with_recv_timeout(Duration::from_secs(10));
    for i in 0..1000 {
        ok(a.send(Message::new(3, 0, 1).with("seq", Value::Int64(i))))?;
    }
    for i in 0..1000 {
        ensure!(ok(ok(b.recv(1))?.i64("seq"))? == i, "tcp message {i} out of order");
    }

    let mut rng = FedRng::new(101);
    let train = random_dataset(&mut rng, 90, 5, 3);
    let exp = experiment(ModelSpec::logistic_regression(5, 3), train, 3, Plan::new(AlgorithmKind::Fedavg, 3, 1, 8, 0.1, 101));
    let sim = ok(simulate(&exp))?;
    let tcp = ok(run_tcp_localhost(&exp, Duration::from_secs(20)))?;
    ensure!(sim.len() == 3 && tcp.len() == 3, "round counts {} / {}", sim.len(), tcp.len());
    for (s, t) in sim.iter().zip(&tcp) {
        ensure!(s.global.bitwise_eq(&t.global), "round {} differs over tcp", s.round);
    }
    Ok("10000 roundtrips, 1000-message FIFO (in-process, tcp), 4-worker tcp fedavg bitwise".into())
}

// 2. gradients

fn gradients() -> Check {
    let kinds = [
        ("logreg", ModelSpec::logistic_regression(3, 2)),
        ("mlp-tanh", ModelSpec::mlp(3, 4, 2, Activation::Tanh)),
        ("mlp-relu", ModelSpec::mlp(3, 4, 2, Activation::Relu)),
    ];
    let mut summary = Vec::new();
    for (i, (name, template)) in kinds.iter().enumerate() {
        let mut worst = 0.0f64;
        for s in 0..100u64 {
            let (spec, params, batch) = random_instance(template, false, 1000 * i as u64 + s);
            let report = ok(gradient_check(&spec, &params, &batch, 1e-5, 1e-6, None))?;
            worst = worst.max(report.max_rel_error);
        }
        ensure!(worst < 1e-6, "{name}: max relative error {worst:e}");
        summary.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("100 instances each, max rel error: {}", summary.join(", ")))
}

// 3. fedavg algebra

fn update(id: u32, values: Vec<f64>, n: u64) -> ClientUpdate {
    ClientUpdate { client_id: id, params: vector(values), n_samples: n }
}

fn fedavg_algebra() -> Check {
    let got = ok(fedavg_aggregate(&[update(0, vec![0.0, 2.0], 1), update(1, vec![4.0, 2.0], 3)]))?;
    ensure!(
        (got.values()[0] - 3.0).abs() <= 1e-15 && (got.values()[1] - 2.0).abs() <= 1e-15,
        "[0,2]/[4,2] gave {:?}",
        got.values()
    );

    let mut rng = FedRng::new(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = 1 + rng.index(8);
        let dim = 2 * (1 + rng.index(4));
        let ups: Vec<ClientUpdate> = (0..n)
            .map(|k| update(k as u32, (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect(), 1 + rng.index(50) as u64))
            .collect();
        let got = ok(fedavg_aggregate(&ups))?;
        let total: f64 = ups.iter().map(|u| u.n_samples as f64).sum();
        for i in 0..dim {
            let direct: f64 = ups.iter().map(|u| u.n_samples as f64 * u.params.values()[i]).sum::<f64>() / total;
            worst = worst.max((got.values()[i] - direct).abs());
        }
        let points: Vec<&ModelParams> = ups.iter().map(|u| &u.params).collect();
        let weights: Vec<f64> = ups.iter().map(|u| u.n_samples as f64).collect();
        ensure!(ok(weighted_mean(&points, &weights))?.bitwise_eq(&got), "weighted_mean disagrees with fedavg");
        for scale in [2u64, 3, 7, 1000] {
            let scaled: Vec<ClientUpdate> =
                ups.iter().map(|u| ClientUpdate { n_samples: u.n_samples * scale, ..u.clone() }).collect();
            ensure!(ok(fedavg_aggregate(&scaled))?.bitwise_eq(&got), "scaling weights by {scale} changed the result");
        }
    }
    ensure!(worst <= 1e-15, "max deviation from direct formula {worst:e}");
    Ok(format!("[0,2]/[4,2] -> [3,2]; 1000 random cases within {worst:.1e}; scaling by 2,3,7,1000 bitwise"))
}

// 4. oracle equivalences

fn split_oracle(rng: &mut FedRng, seed: u64) -> Result<(), String> {
    loop {
        let d = 1 + rng.index(8);
        let h = 1 + rng.index(8);
        let c = 2 + rng.index(7);
        let n_clients = 1 + rng.index(3);
        let per = 1 + rng.index(10);
        let bs = 1 + rng.index(8);
        let epochs = 1 + rng.index(2);
        if epochs * per.div_ceil(bs) > 5 {
            continue;
        }
        let act = if rng.index(2) == 0 { Activation::Tanh } else { Activation::Relu };
        let l2 = if rng.index(2) == 0 { 0.0 } else { 0.05 };
        let model = ModelSpec::mlp(d, h, c, act).with_l2(l2);
        let train = random_dataset(rng, n_clients * per, d, c);
        let rounds = 1 + rng.index(2);
        let lr = rng.uniform_range(0.01, 0.5);
        let exp = experiment(model, train, n_clients, Plan::new(AlgorithmKind::Split, rounds, epochs, bs, lr, seed));
        let results = ok(simulate(&exp))?;
        let mut params = initial(&exp);
        for r in 1..=rounds {
            for k in 0..n_clients {
                params = ok(local_train(
                    &exp.model,
                    &params,
                    &exp.train,
                    exp.partition.client(k),
                    epochs,
                    bs,
                    lr,
                    exp.train_seed(r, k),
                ))?;
            }
            ensure!(results[r - 1].global.bitwise_eq(&params), "split seed {seed} round {r} differs");
        }
        return Ok(());
    }
}

fn vfl_oracle(rng: &mut FedRng, seed: u64) -> Result<(), String> {
    loop {
        let d = 2 + rng.index(7);
        let c = 2 + rng.index(7);
        let n = 1 + rng.index(40);
        let bs = 1 + rng.index(8);
        let epochs = 1 + rng.index(2);
        if epochs * n.div_ceil(bs) > 5 {
            continue;
        }
        let k = 1 + rng.index(d - 1);
        let l2 = if rng.index(2) == 0 { 0.0 } else { 0.05 };
        let model = ModelSpec::logistic_regression(d, c).with_l2(l2);
        let train = random_dataset(rng, n, d, c);
        let rounds = 1 + rng.index(2);
        let lr = rng.uniform_range(0.01, 0.5);
        let mut plan = Plan::new(AlgorithmKind::Vfl, rounds, epochs, bs, lr, seed);
        plan.party_features = Some([(0..k).collect(), (k..d).collect()]);
        let exp = experiment(model, train, 1, plan);
        let results = ok(simulate(&exp))?;
        let all: Vec<usize> = (0..n).collect();
        let mut params = initial(&exp);
        for r in 1..=rounds {
            params = ok(local_train(&exp.model, &params, &exp.train, &all, epochs, bs, lr, exp.train_seed(r, 0)))?;
            ensure!(results[r - 1].global.bitwise_eq(&params), "vfl seed {seed} round {r} differs");
        }
        return Ok(());
    }
}

fn oracle_equivalences() -> Check {
    let mut rng = FedRng::new(4);
    for seed in 0..20 {
        split_oracle(&mut rng, seed)?;
        vfl_oracle(&mut rng, 100 + seed)?;
    }
    Ok("20 split configs == sequential monolithic training, 20 vfl configs == centralized, bitwise".into())
}

// 5. krum

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if n < k {
        return Vec::new();
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

fn brute_force_scores(points: &[Vec<f64>], f: usize) -> Vec<f64> {
    let n = points.len();
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    (0..n)
        .map(|i| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            combinations(others.len(), n - f - 2)
                .iter()
                .map(|subset| subset.iter().map(|&s| d2(&points[i], &points[others[s]])).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn krum_oracle() -> Check {
    let mut rng = FedRng::new(5);
    for inst in 0..500 {
        let f = rng.index(3);
        let n = 2 * f + 3 + rng.index(4);
        let dim = 2 * (1 + rng.index(3));
        // small integers keep every distance and sum exact
        let raw: Vec<Vec<f64>> =
            (0..n).map(|_| (0..dim).map(|_| rng.index(21) as f64 - 10.0).collect()).collect();
        let points: Vec<ModelParams> = raw.iter().cloned().map(vector).collect();
        let expected = brute_force_scores(&raw, f);
        let got = ok(krum_scores(&points, f))?;
        ensure!(got == expected, "instance {inst}: scores {got:?} vs {expected:?}");
        let best = (0..n).fold(0, |b, i| if expected[i] < expected[b] { i } else { b });
        let (idx, chosen) = ok(krum(&points, f))?;
        ensure!(idx == best && chosen.bitwise_eq(&points[best]), "instance {inst}: krum picked {idx}, oracle {best}");
        let m = 1 + rng.index(n - f - 2);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| expected[a].total_cmp(&expected[b]).then(a.cmp(&b)));
        let selected: Vec<&ModelParams> = order[..m].iter().map(|&i| &points[i]).collect();
        let oracle = ok(weighted_mean(&selected, &vec![1.0; m]))?;
        ensure!(ok(multi_krum(&points, f, m))?.bitwise_eq(&oracle), "instance {inst}: multi-krum m={m} differs");
    }

    let n = 8;
    let global = vector(vec![1.0, -2.0, 0.5, 3.0]);
    let w_mal = vector(vec![9.0, 9.0, -7.0, 4.0]);
    let mal = ok(attack_model_replacement(&w_mal, &global, n as f64))?;
    let mut ups = vec![ClientUpdate { client_id: 0, params: mal.clone(), n_samples: 10 }];
    let mut noisy = vec![mal];
    for k in 1..n {
        ups.push(ClientUpdate { client_id: k as u32, params: global.clone(), n_samples: 10 });
        let jitter: Vec<f64> = global.values().iter().map(|v| v + rng.uniform_range(-0.01, 0.01)).collect();
        noisy.push(vector(jitter));
    }
    let mean = ok(fedavg_aggregate(&ups))?;
    ensure!(mean.bitwise_eq(&w_mal), "mean {:?} is not w_mal", mean.values());
    let points: Vec<ModelParams> = ups.iter().map(|u| u.params.clone()).collect();
    let (idx, chosen) = ok(krum(&points, 1))?;
    ensure!(idx != 0 && chosen.bitwise_eq(&global), "krum selected the attacker");
    let (idx, _) = ok(krum(&noisy, 1))?;
    ensure!(idx != 0, "krum selected the attacker among noisy benign updates");
    Ok("500 instances match brute force (scores, selection, multi-krum); replacement: mean == w_mal, krum benign".into())
}

// 6. rfa

fn objective(z: &[f64], points: &[Vec<f64>], weights: &[f64]) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * ((z[0] - p[0]).powi(2) + (z[1] - p[1]).powi(2)).sqrt())
        .sum()
}

/// Repeated grid refinement; the objective is convex so zooming on the best
/// cell converges to the minimum.
fn grid_minimum(points: &[Vec<f64>], weights: &[f64]) -> f64 {
    let (mut cx, mut cy, mut half) = (0.0, 0.0, 10.0);
    let steps = 50;
    let mut best = f64::INFINITY;
    for _ in 0..12 {
        let mut arg = (cx, cy);
        for i in 0..=2 * steps {
            for j in 0..=2 * steps {
                let x = cx - half + half * i as f64 / steps as f64;
                let y = cy - half + half * j as f64 / steps as f64;
                let v = objective(&[x, y], points, weights);
                if v < best {
                    best = v;
                    arg = (x, y);
                }
            }
        }
        (cx, cy) = arg;
        half /= 10.0;
    }
    best
}

fn rfa() -> Check {
    let (tol, max_iter, eps) = (1e-7, 1000, 1e-10);
    let corners: Vec<ModelParams> =
        [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]].iter().map(|c| vector(c.to_vec())).collect();
    let trace = ok(rfa_with_trace(&corners, &[1.0; 4], tol, max_iter, eps))?;
    let m = trace.median.values();
    ensure!(m[0].abs() <= tol && m[1].abs() <= tol, "square corners gave {m:?}");

    let mut rng = FedRng::new(6);
    let mut worst = 0.0f64;
    for inst in 0..200 {
        let n = 3 + rng.index(6);
        let raw: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.uniform_range(-5.0, 5.0), rng.uniform_range(-5.0, 5.0)]).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.5, 2.0)).collect();
        let points: Vec<ModelParams> = raw.iter().cloned().map(vector).collect();
        let trace = ok(rfa_with_trace(&points, &weights, tol, max_iter, eps))?;
        ensure!(
            trace.objectives.windows(2).all(|w| w[1] <= w[0]),
            "instance {inst}: objective increased: {:?}",
            trace.objectives
        );
        let got = objective(trace.median.values(), &raw, &weights);
        let oracle = grid_minimum(&raw, &weights);
        let rel = (got - oracle) / oracle;
        worst = worst.max(rel);
        ensure!(rel <= 1e-6, "instance {inst}: objective {got} vs grid {oracle}");
    }
    Ok(format!("square corners -> origin; 200 instances monotone, worst rel gap to grid {worst:.1e}"))
}

// 7. consensus

fn consensus() -> Check {
    let n = 4;
    let mut rng = FedRng::new(7);
    let train = random_dataset(&mut rng, 40, 3, 2);
    let model = ModelSpec::logistic_regression(3, 2);
    let mut plan = Plan::new(AlgorithmKind::Decentralized, 200, 1, 5, 0.0, 7);
    plan.topology = Some(TopologySpec::Ring { n_workers: n });
    let mut exp = experiment(model.clone(), train, n, plan);
    let inits: Vec<ModelParams> = (0..n)
        .map(|_| ModelParams::new(model.shape(), (0..8).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap())
        .collect();
    exp.initial_models = Some(inits.clone());
    let results = ok(simulate(&exp))?;
    ensure!(results.len() == 200, "{} rounds reported", results.len());
    ensure!(results.iter().all(|r| r.worker_params.len() == n), "missing worker params");
    let max_pairwise = |w: &[ModelParams]| {
            let mut worst = 0.0f64;
            for i in 0..w.len() {
                for j in i + 1..w.len() {
                    let d: f64 = w[i].values().iter().zip(w[j].values()).map(|(a, b)| (a - b).powi(2)).sum();
                    worst = worst.max(d.sqrt());
                }
            }
            worst
    };
    let start = max_pairwise(&inits);
    let disagreement: Vec<f64> = results.iter().map(|r| max_pairwise(&r.worker_params)).collect();
    ensure!(disagreement[0] < start, "first round did not reduce disagreement");
    let hit = disagreement.iter().position(|&d| d < 1e-8).ok_or("disagreement never fell below 1e-8")?;
    ensure!(
        disagreement.windows(2).all(|w| w[1] <= w[0]),
        "disagreement not monotone: {disagreement:?}"
    );
    ensure!(
        disagreement[..=hit].windows(2).all(|w| w[1] < w[0]),
        "disagreement stalled before 1e-8"
    );
    Ok(format!("initial {start:.2}, below 1e-8 after {} rounds, final {:.1e}, monotone", hit + 1, disagreement[199]))
}

// 8. non-iid gap

fn final_accuracy(partition: serde_json::Value, seed: u64) -> Result<f64, String> {
    let config = json!({
        "seed": seed,
        "dataset": {"kind": "synthetic", "alpha": 0, "beta": 0, "n_clients": 30, "samples_per_client": 100},
        "partition": partition,
        "model": {"kind": "logistic_regression"},
        "algorithm": {"kind": "fedavg", "rounds": 100, "clients_per_round": 10}
    });
    let config = ok(parse_config_str(&config.to_string()))?;
    let exp = ok(prepare_experiment(&config, Path::new(".")))?;
    let results = ok(simulate(&exp))?;
    Ok(results.last().ok_or("no rounds")?.test_accuracy)
}

fn non_iid_gap() -> Check {
    let (mut one_class, mut lda) = (0.0, 0.0);
    for seed in 1..=5 {
        one_class += final_accuracy(json!({"method": "one_class", "n_clients": 10}), seed)? / 5.0;
        lda += final_accuracy(json!({"method": "lda", "n_clients": 10, "alpha": 100.0}), seed)? / 5.0;
    }
    ensure!(one_class < lda, "one_class {one_class:.4} is not below lda {lda:.4}");
    Ok(format!("mean final accuracy one_class {one_class:.4} < lda(100) {lda:.4}"))
}

// 9. weak dp

fn weak_dp() -> Check {
    let mut rng = FedRng::new(9);
    let global = vector((0..6).map(|_| rng.normal(0.0, 1.0)).collect());
    let ups: Vec<ClientUpdate> = (0..5)
        .map(|k| update(k, (0..6).map(|_| rng.normal(0.0, 2.0)).collect(), 1 + rng.index(20) as u64))
        .collect();
    let bound = 1.5;
    let clipped = ok(AggregatorSpec::Clip { bound }.aggregate(&ups, &global, 0))?;
    for seed in 0..50 {
        ensure!(ok(weak_dp_aggregate(&ups, &global, bound, 0.0, seed))?.bitwise_eq(&clipped), "sigma=0 differs from clipping");
    }
    let manual: Vec<ClientUpdate> =
        ups.iter().map(|u| ClientUpdate { params: clip_update(&u.params, &global, bound).unwrap(), ..u.clone() }).collect();
    ensure!(ok(fedavg_aggregate(&manual))?.bitwise_eq(&clipped), "clip aggregator differs from clip + mean");

    let sigma = 0.3;
    let draws = 10_000;
    let samples: Vec<f64> = (0..draws)
        .map(|s| weak_dp_aggregate(&ups, &global, bound, sigma, s).map(|p| p.values()[0] - clipped.values()[0]))
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{e:?}"))?;
    let mean = samples.iter().sum::<f64>() / draws as f64;
    let std = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
    ensure!((std - sigma).abs() <= 0.05 * sigma, "noise std {std} vs sigma {sigma}");
    Ok(format!("sigma=0 equals clipping bitwise; std over {draws} draws {std:.4} (sigma {sigma})"))
}

// 10. cli

fn fedsim(args: &[&str]) -> Result<Output, String> {
    Command::new(env!("CARGO_BIN_EXE_fedsim")).args(args).output().map_err(|e| e.to_string())
}

fn cli_contract() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let write = |name: &str, v: serde_json::Value| {
        let p = dir.path().join(name);
        std::fs::write(&p, v.to_string()).unwrap();
        p.to_str().unwrap().to_string()
    };
    let good = json!({
        "seed": 11,
        "dataset": {"kind": "synthetic", "alpha": 0.5, "beta": 0.5, "n_clients": 4, "samples_per_client": 40},
        "partition": {"method": "natural"},
        "model": {"kind": "mlp", "hidden_dim": 4},
        "algorithm": {"kind": "fedavg", "rounds": 3, "lr": 0.05}
    });
    let config = write("good.json", good.clone());
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("m{i}.jsonl"));
        let o = fedsim(&["run", "--config", &config, "--output", out.to_str().unwrap()])?;
        ensure!(o.status.code() == Some(0), "run exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
        let records: Vec<MetricsRecord> = std::fs::read_to_string(&out)
            .map_err(|e| e.to_string())?
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| format!("bad jsonl line: {e}")))
            .collect::<Result<_, _>>()?;
        ensure!(records.iter().map(|r| r.round).eq(1..=3), "rounds not contiguous");
        runs.push(
            records
                .into_iter()
                .map(|mut r| {
                    r.wallclock_seconds = 0.0;
                    r
                })
                .collect::<Vec<_>>(),
        );
    }
    ensure!(runs[0] == runs[1], "two runs differ beyond wallclock");

    let mut bad = good.clone();
    bad["algorithm"]["kind"] = json!("krumm");
    let o = fedsim(&["run", "--config", &write("bad.json", bad)])?;
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    ensure!(o.status.code() == Some(2) && err.contains("/algorithm/kind"), "schema error: {:?} {err}", o.status.code());

    let mut cross = good.clone();
    cross["algorithm"]["clients_per_round"] = json!(9);
    let o = fedsim(&["run", "--config", &write("cross.json", cross)])?;
    ensure!(o.status.code() == Some(2), "cross-field error exited {:?}", o.status.code());

    let o = fedsim(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()])?;
    ensure!(o.status.code() == Some(2), "missing config exited {:?}", o.status.code());

    let unwritable = dir.path().join("no/such/dir/m.jsonl");
    let o = fedsim(&["run", "--config", &config, "--output", unwritable.to_str().unwrap()])?;
    ensure!(o.status.code() == Some(3), "unwritable output exited {:?}", o.status.code());
    Ok("exit codes 0/2/3, schema pointer /algorithm/kind, deterministic jsonl".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("codec & transport", codec_and_transport, 30),
        ("gradient suite", gradients, 10),
        ("fedavg algebra", fedavg_algebra, 60),
        ("oracle equivalences", oracle_equivalences, 60),
        ("krum oracle", krum_oracle, 60),
        ("rfa", rfa, 120),
        ("decentralized consensus", consensus, 60),
        ("non-iid gap", non_iid_gap, 300),
        ("weak dp", weak_dp, 30),
        ("cli contract", cli_contract, 120),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(_) if secs > *budget as f64 => Err(format!("took {secs:.1}s, budget {budget}s")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += outcome.is_err() as usize;
        println!("[{tag}] {:>2}. {name}: {detail} ({secs:.2}s)", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
