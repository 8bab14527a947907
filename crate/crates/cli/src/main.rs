//! `fedsim`: run federated experiments from JSON configs.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use fedsim::algorithms::{run_tcp_localhost_with_sink, run_worker, RoundSink};
use fedsim::comm::{PeerTable, TcpTransport, WorkerId};
use fedsim::harness::{
    gradcheck, inspect_partition, jsonl_sink, open_metrics, parse_config, prepare_experiment, run_simulated,
    ConfigError, HarnessError, Mode, RunConfig, RunSummary,
};
use fedsim::models::ModelSpec;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated learning simulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simulate,
    Distributed,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write one JSON metrics record per round.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Distributed mode: run only this worker (needs --peers).
        #[arg(long, requires = "peers")]
        worker_id: Option<WorkerId>,
        /// JSON object mapping worker ids to "host:port".
        #[arg(long)]
        peers: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seconds to wait for peers in distributed mode.
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
    },
    /// Print per-client sizes, label histograms and label entropy as JSON.
    InspectPartition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare analytic and finite-difference gradients for a model spec.
    Gradcheck {
        /// Model spec as inline JSON or a path to a JSON file.
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Adds 1.0 to one analytic gradient coordinate.
        #[arg(long, hide = true)]
        corrupt: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            mode,
            worker_id,
            peers,
            seed,
            output,
            timeout_secs,
        } => cmd_run(&config, mode, worker_id, peers.as_deref(), seed, output, Duration::from_secs(timeout_secs)),
        Command::InspectPartition { config, seed } => cmd_inspect(&config, seed),
        Command::Gradcheck { model, seed, corrupt } => cmd_gradcheck(&model, seed, corrupt),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<(RunConfig, PathBuf), HarnessError> {
    let mut config = parse_config(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn config_error(message: String) -> HarnessError {
    HarnessError::Config(ConfigError::Schema {
        pointer: String::new(),
        message,
    })
}

fn read_peers(path: &Path) -> Result<PeerTable, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| config_error(format!("peers file {}: {e}", path.display())))?;
    raw.into_iter()
        .map(|(id, addr)| {
            let id: WorkerId = id.parse().map_err(|_| config_error(format!("peer id {id:?} is not a worker id")))?;
            let addr: SocketAddr = addr
                .parse()
                .map_err(|_| config_error(format!("peer {id} address {addr:?} is not host:port")))?;
            Ok((id, addr))
        })
        .collect()
}

fn print_summary(summary: &RunSummary, to_stdout: bool) {
    let line = serde_json::to_string(summary).expect("summary serializes");
    if to_stdout {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn cmd_run(
    config_path: &Path,
    mode: Option<ModeArg>,
    worker_id: Option<WorkerId>,
    peers: Option<&Path>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    timeout: Duration,
) -> Result<(), HarnessError> {
    let (mut config, base) = load(config_path, seed)?;
    if let Some(m) = mode {
        config.mode = match m {
            ModeArg::Simulate => Mode::Simulate,
            ModeArg::Distributed => Mode::Distributed,
        };
    }
    if output.is_some() {
        config.output = output;
    }
    if worker_id.is_some() && config.mode != Mode::Distributed {
        return Err(config_error("--worker-id needs distributed mode".into()));
    }
    let output = config.output.clone();
    let writer: Box<dyn Write + Send> = match &output {
        Some(path) if worker_id.is_none_or(|id| id == 0) => Box::new(open_metrics(path, &config)?),
        _ => Box::new(std::io::stdout()),
    };
    let digest = config.digest();
    match (config.mode, worker_id) {
        (Mode::Simulate, _) => {
            let (_, summary) = run_simulated(&config, &base, writer)?;
            print_summary(&summary, output.is_some());
        }
        (Mode::Distributed, None) => {
            let exp = prepare_experiment(&config, &base)?;
            let results = run_tcp_localhost_with_sink(&exp, timeout, jsonl_sink(writer, &config))?;
            print_summary(&RunSummary::from_results(&results, &digest), output.is_some());
        }
        (Mode::Distributed, Some(id)) => {
            let peers = read_peers(peers.expect("clap requires --peers"))?;
            let exp = prepare_experiment(&config, &base)?;
            let n = exp.n_workers() as WorkerId;
            if let Some(missing) = (0..n).find(|k| !peers.contains_key(k)) {
                return Err(config_error(format!("peers file has no address for worker {missing} of {n}")));
            }
            if id >= n {
                return Err(config_error(format!("--worker-id {id} out of range for {n} workers")));
            }
            let listen = peers[&id];
            let transport = TcpTransport::bind(id, listen, peers)
                .map_err(|e| HarnessError::Run(e.into()))?
                .with_connect_timeout(timeout)
                .with_recv_timeout(timeout);
            let sink = if id == 0 { jsonl_sink(writer, &config) } else { RoundSink::new() };
            log::info!("worker {id} listening on {listen}");
            run_worker(&exp, id, Arc::new(transport), &sink)?;
            if id == 0 {
                print_summary(&RunSummary::from_results(&sink.results(), &digest), output.is_some());
            }
        }
    }
    Ok(())
}

fn cmd_inspect(config_path: &Path, seed: Option<u64>) -> Result<(), HarnessError> {
    let (config, base) = load(config_path, seed)?;
    let report = inspect_partition(&config, &base)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn cmd_gradcheck(model: &str, seed: u64, corrupt: Option<usize>) -> Result<(), HarnessError> {
    let text = if model.trim_start().starts_with('{') {
        model.to_string()
    } else {
        std::fs::read_to_string(model).map_err(|source| ConfigError::Io {
            path: model.to_string(),
            source,
        })?
    };
    let spec: ModelSpec = serde_json::from_str(&text).map_err(|e| config_error(format!("model spec: {e}")))?;
    let report = gradcheck(&spec, seed, corrupt)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    println!(
        "{}: max relative error {:.3e} at {} (index {})",
        if report.pass { "PASS" } else { "FAIL" },
        report.max_rel_error,
        report.worst_tensor,
        report.worst_index
    );
    Ok(())
}
