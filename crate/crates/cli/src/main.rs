//! `relay`: simulate, ship, analyze and report per-request IO latency.

mod commands;
mod jsonl;
mod pipeline;
mod verify;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relay_core::ProbeDepth;

/// Exit status when a command ran but a check it performs failed.
pub const EXIT_CHECK_FAILED: u8 = 1;
/// Exit status for bad flags, unreadable or undecodable inputs.
pub const EXIT_INPUT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "relay", version, about = "Per-request, per-layer IO latency profiler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulated workload and write its trace (and ground truth).
    Simulate(SimulateArgs),
    /// Receive a trace from a streaming agent and write it to a file.
    Collect(CollectArgs),
    /// Attribute every request in a trace; writes one profile per line.
    Analyze(AnalyzeArgs),
    /// Build the static report (CSV, JSON, SVG) from profiles.
    Report(ReportArgs),
    /// Validate a trace and check the analyzer against the reference oracle.
    #[command(alias = "oracle")]
    Verify(VerifyArgs),
    /// simulate, analyze, verify and report in one go, with a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SeedArg {
    /// Workload seed. RELAY_SEED, when set, takes precedence.
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArg {
    pub fn resolve(&self) -> anyhow::Result<Option<u64>> {
        match std::env::var("RELAY_SEED") {
            Ok(v) => Ok(Some(v.trim().parse().map_err(|_| anyhow::anyhow!("RELAY_SEED={v:?} is not an integer"))?)),
            Err(_) => Ok(self.seed),
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario preset: seqread_hit, randread_miss or mt_irq_skew.
    #[arg(long)]
    preset: String,
    #[command(flatten)]
    seed: SeedArg,
    /// Probe depth, L1 (syscall only) to L8 (every probe).
    #[arg(long, default_value = "L8")]
    depth: ProbeDepth,
    /// Trace file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth JSON to write.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Stream the trace to a collector at this address instead of (or as
    /// well as) writing it.
    #[arg(long)]
    stream: Option<SocketAddr>,
    /// Replay speed for --stream relative to simulated time; 0 disables pacing.
    #[arg(long, default_value_t = 1.0)]
    replay_speed: f64,
    /// Per-cpu ring size in bytes for --stream.
    #[arg(long, default_value_t = relay_core::transport::DEFAULT_RING_BYTES)]
    ring_bytes: usize,
    /// Agent drain period in milliseconds for --stream.
    #[arg(long, default_value_t = 100)]
    period_ms: u64,
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    /// Address to listen on, e.g. 127.0.0.1:7070.
    #[arg(long)]
    listen: SocketAddr,
    /// Trace file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct LayerArgs {
    /// Layer description; defaults to the shipped read-path layers.
    #[arg(long)]
    layers: Option<PathBuf>,
    /// Profile script to check the layer description against.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Trace file (.p2lt).
    trace: PathBuf,
    #[command(flatten)]
    layers: LayerArgs,
    /// Profiles output, JSON lines.
    #[arg(long)]
    out: PathBuf,
    /// Also write grouping statistics (discarded and incomplete counts) here.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Profiles, JSON lines as written by `analyze`.
    profiles: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Requests per window for the windowed p99.
    #[arg(long, default_value_t = relay_core::stats::DEFAULT_WINDOW)]
    window: usize,
    /// Requests slower than this (ns) are decomposed as tails.
    #[arg(long, default_value_t = relay_core::stats::DEFAULT_TAIL_THRESHOLD_NS)]
    tail_threshold: u64,
    /// Grouping statistics written by `analyze --stats`.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Trace file (.p2lt).
    trace: PathBuf,
    #[command(flatten)]
    layers: LayerArgs,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Scenario preset.
    preset: String,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value = "L8")]
    depth: ProbeDepth,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also ship the trace through a loopback agent and collector and
    /// require the result to match the file byte for byte.
    #[arg(long)]
    network: bool,
    #[arg(long, default_value_t = relay_core::stats::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = relay_core::stats::DEFAULT_TAIL_THRESHOLD_NS)]
    tail_threshold: u64,
}

/// Error raised when a command completed but found a problem.
#[derive(Debug)]
pub struct CheckFailed(pub serde_json::Value);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Collect(a) => commands::collect(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Report(a) => commands::report(a),
        Command::Verify(a) => verify::run(a),
        Command::Pipeline(a) => pipeline::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind, detail) = match e.downcast_ref::<CheckFailed>() {
                Some(c) => (EXIT_CHECK_FAILED, "check", c.0.clone()),
                None => (EXIT_INPUT, "input", serde_json::Value::Null),
            };
            let record = serde_json::json!({ "error": kind, "message": format!("{e:#}"), "detail": detail });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
