use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rrto_core::bench::{compare_modes, emit_csv, run_scenario, BenchError, Mode, ScenarioConfig};
use rrto_core::oss::{operator_sequence_search, OssConfig};
use rrto_core::server::ServerSession;
use rrto_core::trace::{TagMode, TraceLog};
use rrto_core::transport::endpoint::serve_tcp;
use rrto_core::workloads::{bundled_names, record_locally, Variant, Workload};

#[derive(Parser)]
#[command(name = "rrto", version, about = "Record/replay offloading of inference runtime calls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario runs and comparisons.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Window search diagnostics.
    #[command(subcommand)]
    Oss(OssCommand),
    /// Trace files.
    #[command(subcommand)]
    Trace(TraceCommand),
    /// Serve offloading sessions over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
        /// Profile whose kernels the server provides.
        #[arg(long)]
        workload: String,
        /// Exit after this many connections.
        #[arg(long)]
        max_connections: Option<usize>,
    },
    /// List bundled workload profiles.
    Profiles,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run one scenario and write per-inference metrics.
    Run(RunArgs),
    /// Run a list of scenarios and report pairwise reductions.
    Compare {
        /// JSON array of scenario objects.
        #[arg(long)]
        specs: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Bundled profile name or profile file.
    #[arg(long)]
    workload: String,
    #[arg(long)]
    mode: Mode,
    #[arg(long, default_value_t = 2.0)]
    rtt_ms: f64,
    #[arg(long, default_value_t = 93.0)]
    bandwidth_mbps: f64,
    /// CSV with a `t_s,mbps` header.
    #[arg(long)]
    bw_trace: Option<PathBuf>,
    #[arg(long)]
    inferences: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Advance a virtual clock instead of waiting in real time.
    #[arg(long)]
    sim_clock: bool,
    #[arg(long)]
    out: PathBuf,
    /// Switch to a mutated window from this inference on (1-based).
    #[arg(long)]
    mutate_at: Option<usize>,
    /// Alternate between the original and the mutated window.
    #[arg(long)]
    alternating: bool,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    coarse_tags: bool,
    /// Remote server `host:port`.
    #[arg(long)]
    server: Option<String>,
}

impl RunArgs {
    fn config(&self) -> ScenarioConfig {
        ScenarioConfig {
            rtt_ms: self.rtt_ms,
            bandwidth_mbps: self.bandwidth_mbps,
            bw_trace: self.bw_trace.clone(),
            sim_clock: self.sim_clock,
            mutate_at: self.mutate_at,
            alternating: self.alternating,
            repeats: self.repeats,
            coarse_tags: self.coarse_tags,
            server: self.server.clone(),
            ..ScenarioConfig::new(&self.workload, self.mode, self.inferences, self.seed)
        }
    }
}

#[derive(Subcommand)]
enum OssCommand {
    /// Search a recorded trace and print the window as JSON.
    Analyze {
        trace: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        coarse_tags: bool,
    },
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Execute a workload locally and write its call log.
    Record {
        #[arg(long)]
        workload: String,
        #[arg(long)]
        inferences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        mutate_at: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn bench_run(args: &RunArgs) -> Result<()> {
    let cfg = args.config();
    let report = match run_scenario(&cfg) {
        Ok(report) => report,
        Err(BenchError::Interrupted { inference, rows, source }) => {
            if !rows.is_empty() {
                emit_csv(&rows, &args.out)?;
            }
            bail!("run stopped at inference {inference} ({} rows kept): {source}", rows.len());
        }
        Err(e) => return Err(e.into()),
    };
    emit_csv(&report.rows, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let summary = json!({
        "workload": cfg.workload,
        "mode": cfg.mode,
        "inferences": cfg.inferences,
        "loading": report.loading,
        "init": report.init,
        "summary": report.summary,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn bench_compare(specs: &PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(specs).with_context(|| format!("reading {}", specs.display()))?;
    let cfgs: Vec<ScenarioConfig> = serde_json::from_str(&text).context("parsing scenario list")?;
    println!("{}", serde_json::to_string_pretty(&compare_modes(&cfgs)?)?);
    Ok(())
}

fn oss_analyze(trace: &PathBuf, repeats: usize, coarse_tags: bool) -> Result<()> {
    if repeats < 2 {
        bail!("--repeats must be at least 2");
    }
    let file = File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    let log = TraceLog::deserialize(BufReader::new(file))?;
    let cfg = OssConfig {
        repeats,
        tag_mode: if coarse_tags { TagMode::Coarse } else { TagMode::Fine },
        ..OssConfig::default()
    };
    let out = match operator_sequence_search(&log, &cfg) {
        None => serde_json::Value::Null,
        Some(ios) => {
            let composition: serde_json::Map<String, serde_json::Value> = ios
                .composition()
                .into_iter()
                .filter(|&(_, n)| n > 0)
                .map(|(k, n)| (k.name().to_owned(), n.into()))
                .collect();
            json!({
                "start": ios.hit().start,
                "period": ios.period(),
                "composition": composition,
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn trace_record(workload: &str, n: usize, seed: u64, mutate_at: Option<usize>, out: &PathBuf) -> Result<()> {
    let workload = Workload::load(workload)?;
    let variant = match mutate_at {
        Some(m) if m == 0 || m > n => bail!("--mutate-at must be within 1..={n}"),
        Some(m) => Variant::MutateAt(m),
        None => Variant::Static,
    };
    let stream = workload.stream(n, seed, variant);
    let log = record_locally(stream.calls(), &mut workload.device());
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    log.serialize(BufWriter::new(file))?;
    eprintln!("wrote {} records to {}", log.len(), out.display());
    Ok(())
}

fn serve(listen: &str, workload: &str, max_connections: Option<usize>) -> Result<()> {
    let device = Workload::load(workload)?.device();
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    serve_tcp(listener, move || ServerSession::wall(device.clone()), max_connections)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Bench(BenchCommand::Run(args)) => bench_run(&args),
        Command::Bench(BenchCommand::Compare { specs }) => bench_compare(&specs),
        Command::Oss(OssCommand::Analyze {
            trace,
            repeats,
            coarse_tags,
        }) => oss_analyze(&trace, repeats, coarse_tags),
        Command::Trace(TraceCommand::Record {
            workload,
            inferences,
            seed,
            mutate_at,
            out,
        }) => trace_record(&workload, inferences, seed, mutate_at, &out),
        Command::Serve {
            listen,
            workload,
            max_connections,
        } => serve(&listen, &workload, max_connections),
        Command::Profiles => {
            for name in bundled_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}
