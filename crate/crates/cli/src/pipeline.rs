//! End-to-end run: simulate, persist, decode, verify, analyze, report, and
//! a manifest of everything written.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::thread;

use anyhow::{Context, Result};
use relay_core::analyze::analyze;
use relay_core::stats::{emit_report, ReportOptions};
use relay_core::transport::{collector_serve, encode_trace, read_trace_file, write_trace_file, DEFAULT_RING_BYTES, DEFAULT_PERIOD};
use relay_core::{simulate, ProbeDepth};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::{scenario, stream, write_json};
use crate::jsonl::write_profiles;
use crate::verify::verify;
use crate::{CheckFailed, PipelineArgs};

pub const TRACE_FILE: &str = "trace.p2lt";
pub const TRUTH_FILE: &str = "truth.json";
pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const REPORT_DIR: &str = "report";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub versions: BTreeMap<&'static str, String>,
    pub preset: String,
    pub seed: u64,
    pub depth: ProbeDepth,
    pub requests: usize,
    pub records: usize,
    pub checks: Vec<Check>,
    /// Every file written, keyed by path relative to the output directory.
    pub files: BTreeMap<String, FileDigest>,
}

fn digest_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, FileDigest>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            digest_tree(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
        if rel == MANIFEST_FILE {
            continue;
        }
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        out.insert(rel, FileDigest { bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) });
    }
    Ok(())
}

fn check(checks: &mut Vec<Check>, name: &'static str, ok: bool, detail: String) {
    checks.push(Check { name, ok, detail });
}

pub fn run(a: PipelineArgs) -> Result<()> {
    let cfg = scenario(&a.preset, a.seed.resolve()?, a.depth)?;
    let out = a.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let sim = simulate(&cfg)?;
    let mut checks = Vec::new();

    let trace_path = out.join(TRACE_FILE);
    write_trace_file(&trace_path, &sim.records, &sim.strings)?;
    write_json(&out.join(TRUTH_FILE), &sim.truth)?;

    if a.network {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let collector = thread::spawn(move || collector_serve(&listener, Vec::new()));
        let (tracer, agent) = stream(&sim.records, &sim.strings, addr, 1.0, DEFAULT_RING_BYTES, DEFAULT_PERIOD)?;
        let (_, shipped) = collector.join().expect("collector thread")?;
        let direct = encode_trace(&sim.records, &sim.strings)?;
        check(
            &mut checks,
            "network-trace-identical",
            shipped == direct && tracer.dropped == 0,
            format!("{} records sent over {} connection(s), {} dropped", agent.records, agent.connections, tracer.dropped),
        );
    }

    let (records, strings) = read_trace_file(&trace_path)?;
    check(&mut checks, "trace-round-trip", records == sim.records, format!("{} records decoded", records.len()));
    let layers = relay_core::config::default_layers().resolve(&strings);

    let v = verify(&records, &layers);
    check(
        &mut checks,
        "stream-valid",
        v.violations == 0,
        v.first_violation.clone().unwrap_or_else(|| "no violations".into()),
    );
    check(
        &mut checks,
        "analyzer-matches-oracle",
        v.divergences == 0,
        match &v.first_divergence {
            Some(d) => format!("{} divergences; first rid {} bucket {}", v.divergences, d.rid, d.bucket),
            None => format!("{} requests compared", v.requests),
        },
    );

    let analysis = analyze(&records, &layers);
    write_profiles(&out.join(PROFILES_FILE), &analysis.profiles)?;
    write_json(&out.join(STATS_FILE), &analysis.stats)?;
    check(
        &mut checks,
        "all-requests-complete",
        analysis.incomplete.is_empty() && analysis.profiles.len() == sim.truth.requests.len(),
        format!("{} profiled, {} incomplete, {} simulated", analysis.profiles.len(), analysis.incomplete.len(), sim.truth.requests.len()),
    );
    let unconserved = analysis.profiles.iter().filter(|p| !p.is_conserved()).count();
    let unattributed: u64 = analysis.profiles.iter().map(|p| p.unattributed_ns).sum();
    check(
        &mut checks,
        "conservation",
        unconserved == 0 && (cfg.depth != ProbeDepth::MAX || unattributed == 0),
        format!("{unconserved} requests not conserved, {unattributed} ns unattributed"),
    );
    let truth: HashMap<_, _> = sim.truth.requests.iter().map(|t| (t.rid, t.total_ns)).collect();
    let wrong_totals = analysis.profiles.iter().filter(|p| truth.get(&p.rid) != Some(&p.total_ns)).count();
    check(&mut checks, "totals-match-truth", wrong_totals == 0, format!("{wrong_totals} requests differ from ground truth"));

    let opts = ReportOptions { window: a.window.max(1), tail_threshold_ns: a.tail_threshold, ..Default::default() };
    let summary = emit_report(&analysis.profiles, &analysis.stats, &opts, &out.join(REPORT_DIR))?;

    let mut files = BTreeMap::new();
    digest_tree(out, out, &mut files)?;
    let manifest = RunManifest {
        versions: BTreeMap::from([
            ("relay", env!("CARGO_PKG_VERSION").to_owned()),
            ("trace_format", "P2L1".to_owned()),
        ]),
        preset: cfg.name.clone(),
        seed: cfg.seed,
        depth: cfg.depth,
        requests: summary.requests,
        records: records.len(),
        checks,
        files,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    let failed: Vec<&Check> = manifest.checks.iter().filter(|c| !c.ok).collect();
    println!(
        "{}",
        serde_json::json!({ "out": out.display().to_string(), "requests": summary.requests, "checks": manifest.checks.len(), "failed": failed.len() })
    );
    if !failed.is_empty() {
        return Err(CheckFailed(serde_json::to_value(&failed)?).into());
    }
    Ok(())
}
