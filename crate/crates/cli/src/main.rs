//! `protoflow`: ingest mutation streams, run graph jobs on snapshots, and
//! drive the cluster simulator.

mod state;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use protoflow_core::models::{export_result, export_series, temporal_series, SsspScheduler};
use protoflow_core::sim::{gen_stream, simulate, GenKind, GenParams, Job, JobOutput, JobSpec, SimConfig};
use protoflow_core::stream::{parse_stream, render_stream, validate_stream};
use protoflow_core::{replay, Replayed, StreamRecord, Version};

const SEED_ENV: &str = "PROTOFLOW_SEED";

#[derive(Parser, Debug)]
#[command(name = "protoflow", version, about = "Versioned dynamic-graph engine on a simulated cluster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a stream and write it as a versioned state file.
    Ingest {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a graph job on one snapshot.
    Run(RunArgs),
    /// Digest a strided series of snapshots.
    Temporal(TemporalArgs),
    /// Simulate ingestion (and optionally a job) and write metrics.
    Sim(SimArgs),
    /// Schema and epoch-order check only.
    Validate {
        #[arg(long)]
        stream: PathBuf,
    },
    /// Write a synthetic stream.
    Gen(GenArgs),
    /// Export the snapshot rows at a version.
    Snapshot {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        at: Version,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Input {
    /// JSON-lines mutation stream.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// State file written by `ingest`.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Algo {
    Pagerank,
    Sssp,
    Wcc,
    Wordcount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Scheduler {
    Fifo,
    Priority,
}

#[derive(Args, Debug)]
struct JobArgs {
    /// Source vertex for sssp.
    #[arg(long, required_if_eq("algo", "sssp"))]
    source: Option<String>,
    #[arg(long, default_value_t = 20)]
    iters: u32,
    #[arg(long, default_value_t = 0.85)]
    damping: f64,
    #[arg(long, value_enum, default_value_t = Scheduler::Priority)]
    scheduler: Scheduler,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long, default_value_t = 1)]
    machines: usize,
    /// Overridden by PROTOFLOW_SEED when set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long)]
    at: Version,
    #[command(flatten)]
    job: JobArgs,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TemporalArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value = "degree")]
    algo: String,
    #[arg(long)]
    from: Version,
    #[arg(long)]
    to: Version,
    #[arg(long, default_value_t = 1)]
    stride: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 4)]
    machines: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    metrics: PathBuf,
    /// Optional job run on the snapshot at `--at` (or the final one).
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    #[arg(long)]
    at: Option<Version>,
    #[command(flatten)]
    job: JobArgs,
    /// Job results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation trace as JSON-lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    latency: Option<u64>,
    #[arg(long)]
    jitter: Option<u64>,
    #[arg(long)]
    service_ticks: Option<u64>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    window: Option<u64>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    kind: GenKind,
    #[arg(long, default_value_t = 3)]
    epochs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// New nodes per epoch.
    #[arg(long)]
    nodes: Option<usize>,
    /// Edges per new node.
    #[arg(long)]
    degree: Option<usize>,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// PROTOFLOW_SEED, if set. A malformed value is a usage error.
fn env_seed() -> std::result::Result<Option<u64>, String> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| format!("{SEED_ENV}={s:?} is not an unsigned integer")),
        Err(_) => Ok(None),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("IoError: cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("IoError: cannot write {}", path.display()))
}

fn load_records(input: &Input) -> Result<Vec<StreamRecord>> {
    match (&input.stream, &input.state) {
        (Some(p), _) => Ok(parse_stream(&read(p)?)?),
        (None, Some(p)) => Ok(state::load(&read(p)?)?.0),
        (None, None) => unreachable!("clap requires one input"),
    }
}

fn load_replayed(input: &Input) -> Result<Replayed> {
    match (&input.stream, &input.state) {
        (None, Some(p)) => Ok(state::load(&read(p)?)?.1),
        _ => Ok(replay(&load_records(input)?)?),
    }
}

fn job_of(algo: Algo, args: &JobArgs) -> Result<Job> {
    Ok(match algo {
        Algo::Pagerank => Job::PageRank { iterations: args.iters, damping: args.damping },
        Algo::Sssp => Job::Sssp {
            source: args.source.clone().ok_or_else(|| anyhow!("BadParameter: sssp needs --source"))?,
            scheduler: match args.scheduler {
                Scheduler::Fifo => SsspScheduler::Fifo,
                Scheduler::Priority => SsspScheduler::Priority,
            },
        },
        Algo::Wcc => Job::Wcc,
        Algo::Wordcount => Job::WordCount,
    })
}

fn render_output(output: &JobOutput) -> String {
    match output {
        JobOutput::None => String::new(),
        JobOutput::Result(r) => export_result(r),
        JobOutput::Rows(rows) => {
            rows.iter().map(|p| serde_json::to_string(p).expect("rows serialize") + "\n").collect()
        }
    }
}

fn execute(command: Command, seed_override: impl Fn(u64) -> u64) -> Result<()> {
    match command {
        Command::Ingest { stream, out } => {
            let records = parse_stream(&read(&stream)?)?;
            let replayed = replay(&records)?;
            write(&out, &state::render(&records)?)?;
            eprintln!(
                "ingested {} records, {} mutations, sealed through epoch {:?}",
                records.len(),
                replayed.mutations.len(),
                replayed.sealed
            );
        }
        Command::Run(args) => {
            let records = load_records(&args.input)?;
            let cfg = SimConfig::new(args.cluster.machines, seed_override(args.cluster.seed));
            let spec = JobSpec::new(job_of(args.algo, &args.job)?, Some(args.at));
            let outcome = simulate(&cfg, &render_stream(&records), &spec)?;
            write(&args.out, &render_output(&outcome.output))?;
        }
        Command::Temporal(args) => {
            let replayed = load_replayed(&args.input)?;
            let series = temporal_series(&replayed, &args.algo, args.from, args.to, args.stride)?;
            write(&args.out, &export_series(&series))?;
        }
        Command::Sim(args) => {
            let records = load_records(&args.input)?;
            let mut cfg = SimConfig::new(args.machines, seed_override(args.seed));
            cfg.link_latency = args.latency.unwrap_or(cfg.link_latency);
            cfg.jitter = args.jitter.unwrap_or(cfg.jitter);
            cfg.service_ticks = args.service_ticks.unwrap_or(cfg.service_ticks);
            cfg.partitions = args.partitions.unwrap_or(cfg.partitions);
            cfg.window = args.window.unwrap_or(cfg.window);
            let job = match args.algo {
                Some(a) => job_of(a, &args.job)?,
                None => Job::None,
            };
            let outcome = simulate(&cfg, &render_stream(&records), &JobSpec::new(job, args.at))?;
            let metrics = serde_json::to_string_pretty(&outcome.metrics).expect("metrics serialize");
            write(&args.metrics, &(metrics + "\n"))?;
            if let Some(path) = &args.trace {
                write(path, &outcome.trace.to_jsonl())?;
            }
            if let Some(path) = &args.out {
                write(path, &render_output(&outcome.output))?;
            }
            eprintln!(
                "simulated {} ticks on {} machines, snapshot {}, trace {}",
                outcome.metrics.ticks,
                cfg.machines,
                outcome.snapshot.map_or("none".to_string(), |v| v.to_string()),
                outcome.metrics.trace_hash
            );
        }
        Command::Validate { stream } => {
            let summary = validate_stream(&read(&stream)?)?;
            println!(
                "ok: {} records, {} declarations, {} mutations, {} epochs closed",
                summary.records, summary.declarations, summary.mutations, summary.epochs_closed
            );
        }
        Command::Gen(args) => {
            let mut params = GenParams::new(args.epochs, seed_override(args.seed));
            params.nodes = args.nodes.unwrap_or(params.nodes);
            params.degree = args.degree.unwrap_or(params.degree);
            let generated = gen_stream(args.kind, params);
            match &args.out {
                Some(path) => write(path, &generated.to_jsonl())?,
                None => print!("{}", generated.to_jsonl()),
            }
            if let Some((vertex, epoch)) = generated.planted {
                eprintln!("planted top degree gainer {vertex} in epoch {epoch}");
            }
        }
        Command::Snapshot { input, at, out } => {
            let replayed = load_replayed(&input)?;
            let text = replayed.store.snapshot(at).export_jsonl();
            match out {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let env_seed = match env_seed() {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match execute(cli.command, |flag| env_seed.unwrap_or(flag)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("protoflow: {e:#}");
            ExitCode::from(1)
        }
    }
}
