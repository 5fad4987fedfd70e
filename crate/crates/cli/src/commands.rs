use std::fs::{self, File};
use std::io::BufWriter;
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use relay_core::analyze::GroupStats;
use relay_core::config::{default_layers, parse_layer_description, parse_profile_script, LayerMap};
use relay_core::sim::{preset, ScenarioConfig};
use relay_core::stats::{emit_report, ReportOptions};
use relay_core::transport::{agent_run, capture, collector_serve, read_trace_file, write_trace_file, AgentConfig, AgentStats, TracerStats};
use relay_core::{simulate as run_simulation, ProbeDepth, StringTable, TraceRecord};
use serde_json::json;

use crate::jsonl::{read_profiles, write_profiles};
use crate::{AnalyzeArgs, CheckFailed, CollectArgs, LayerArgs, ReportArgs, SimulateArgs};

pub fn scenario(name: &str, seed: Option<u64>, depth: ProbeDepth) -> Result<ScenarioConfig> {
    let mut cfg = preset(name)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.depth = depth;
    Ok(cfg)
}

pub fn load_layers(args: &LayerArgs, table: &StringTable) -> Result<LayerMap> {
    let mut ld = match &args.layers {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_layer_description(&text).with_context(|| format!("{}", p.display()))?
        }
        None => default_layers(),
    };
    if let Some(p) = &args.profile {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let pd = parse_profile_script(&text).with_context(|| format!("{}", p.display()))?;
        ld.link(&pd).context("profile and layer description disagree")?;
    }
    Ok(ld.resolve(table))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).with_context(|| format!("writing {}", path.display()))
}

/// Replays `records` through a capture ring and an agent connected to
/// `addr`. With `speed` > 0 the producer follows the records' timestamps,
/// `speed` times faster than simulated time.
pub fn stream(
    records: &[TraceRecord],
    strings: &StringTable,
    addr: SocketAddr,
    speed: f64,
    ring_bytes: usize,
    period: Duration,
) -> Result<(TracerStats, AgentStats)> {
    let cpus = records.iter().map(|r| r.cpu as usize + 1).max().unwrap_or(1);
    let (mut tracer, source) = capture(cpus, ring_bytes);
    let cfg = AgentConfig { period, ..Default::default() };
    thread::scope(|s| {
        let producer = s.spawn(move || {
            let t0 = Instant::now();
            let ts0 = records.first().map_or(0, |r| r.ts);
            for (i, r) in records.iter().enumerate() {
                if speed > 0.0 && i % 256 == 0 {
                    let due = Duration::from_secs_f64((r.ts - ts0) as f64 / 1e9 / speed);
                    if let Some(wait) = due.checked_sub(t0.elapsed()) {
                        thread::sleep(wait);
                    }
                }
                tracer.emit(r);
            }
            tracer.close()
        });
        let agent = agent_run(addr, source, strings, &cfg);
        let tracer_stats = producer.join().expect("producer thread");
        Ok((tracer_stats, agent?))
    })
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = scenario(&a.preset, a.seed.resolve()?, a.depth)?;
    if a.out.is_none() && a.stream.is_none() {
        bail!("nothing to do: give --out and/or --stream");
    }
    let sim = run_simulation(&cfg)?;
    if let Some(out) = &a.out {
        write_trace_file(out, &sim.records, &sim.strings)?;
    }
    if let Some(truth) = &a.truth {
        write_json(truth, &sim.truth)?;
    }
    let mut summary = json!({
        "preset": cfg.name,
        "seed": cfg.seed,
        "depth": cfg.depth,
        "requests": sim.truth.requests.len(),
        "records": sim.records.len(),
    });
    if let Some(addr) = a.stream {
        let (t, ag) = stream(&sim.records, &sim.strings, addr, a.replay_speed, a.ring_bytes, Duration::from_millis(a.period_ms))?;
        summary["stream"] = json!({ "offered": t.offered, "dropped": t.dropped, "sent": ag.records, "batches": ag.batches, "connections": ag.connections });
        println!("{summary}");
        if t.dropped > 0 {
            return Err(CheckFailed(json!({ "dropped": t.dropped, "offered": t.offered })).into());
        }
        return Ok(());
    }
    println!("{summary}");
    Ok(())
}

pub fn collect(a: CollectArgs) -> Result<()> {
    let listener = TcpListener::bind(a.listen).with_context(|| format!("binding {}", a.listen))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (stats, w) = collector_serve(&listener, BufWriter::new(file))?;
    w.into_inner().map_err(|e| e.into_error()).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{}",
        json!({ "records": stats.records, "batches": stats.batches, "connections": stats.connections, "broken": stats.broken })
    );
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let (records, strings) = read_trace_file(&a.trace)?;
    let layers = load_layers(&a.layers, &strings)?;
    let analysis = relay_core::analyze(&records, &layers);
    write_profiles(&a.out, &analysis.profiles)?;
    if let Some(p) = &a.stats {
        write_json(p, &analysis.stats)?;
    }
    println!(
        "{}",
        json!({
            "records": records.len(),
            "requests": analysis.profiles.len(),
            "incomplete": analysis.incomplete.len(),
            "discarded_irqs": analysis.stats.discarded_irqs,
            "discarded_records": analysis.stats.discarded_records,
        })
    );
    for inc in analysis.incomplete.iter().take(10) {
        eprintln!("incomplete request {}: {}", inc.rid, inc.reason);
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    if a.window == 0 {
        bail!("--window must be positive");
    }
    let profiles = read_profiles(&a.profiles)?;
    let stats: GroupStats = match &a.stats {
        Some(p) => serde_json::from_reader(File::open(p).with_context(|| format!("opening {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => GroupStats::default(),
    };
    let opts = ReportOptions { window: a.window, tail_threshold_ns: a.tail_threshold, ..Default::default() };
    let summary = emit_report(&profiles, &stats, &opts, &a.out)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
