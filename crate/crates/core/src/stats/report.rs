use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyze::{GroupStats, RequestProfile};

use super::svg::{nice_max, Svg, PALETTE};
use super::{
    fairness_table, percentile, request_cpi, start_order, tail_decompose, windowed_p99, FairnessTable, TailEntry,
    WindowedSeries, DEFAULT_TAIL_THRESHOLD_NS, DEFAULT_WINDOW,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportOptions {
    pub window: usize,
    pub tail_threshold_ns: u64,
    /// Charts with more requests than this show, per consecutive bucket of
    /// requests, the slowest request of the bucket.
    pub max_bars: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { window: DEFAULT_WINDOW, tail_threshold_ns: DEFAULT_TAIL_THRESHOLD_NS, max_bars: 1000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ns: u64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub requests: usize,
    pub threads: usize,
    pub layers: Vec<String>,
    pub latency: Option<LatencySummary>,
    /// Mean self time per layer, then io_wait, irq, sched, unattributed.
    pub mean_component_ns: Vec<(String, u64)>,
    pub irq_count: u64,
    pub irq_ns: u64,
    pub tails: usize,
    pub windows: usize,
    pub window: usize,
    pub tail_threshold_ns: u64,
    pub incomplete_requests: u64,
    pub discarded_irqs: u64,
    pub discarded_records: u64,
}

fn layer_names(profiles: &[RequestProfile]) -> Vec<String> {
    profiles.first().map(|p| p.layers.iter().map(|l| l.layer.clone()).collect()).unwrap_or_default()
}

/// (name, value) of every component drawn in charts.
fn components(p: &RequestProfile) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = p.layers.iter().map(|l| (l.layer.clone(), l.self_ns)).collect();
    v.push(("io_wait".into(), p.io_wait_ns));
    v.push(("irq".into(), p.irq_ns));
    v.push(("sched".into(), p.sched_ns));
    v.push(("unattributed".into(), p.unattributed_ns));
    v
}

fn component_names(layers: &[String]) -> Vec<String> {
    let mut v = layers.to_vec();
    v.extend(["io_wait", "irq", "sched", "unattributed"].map(String::from));
    v
}

fn summarize(profiles: &[RequestProfile], stats: &GroupStats, opts: &ReportOptions, tails: usize, windows: usize) -> ReportSummary {
    let layers = layer_names(profiles);
    let totals: Vec<u64> = profiles.iter().map(|p| p.total_ns).collect();
    let n = profiles.len() as u64;
    let latency = (!totals.is_empty()).then(|| LatencySummary {
        mean_ns: totals.iter().sum::<u64>() / n,
        p50_ns: percentile(&totals, 0.5).unwrap(),
        p99_ns: percentile(&totals, 0.99).unwrap(),
        max_ns: *totals.iter().max().unwrap(),
    });
    let mut sums = vec![0u64; layers.len() + 4];
    for p in profiles {
        for (i, (_, v)) in components(p).into_iter().enumerate() {
            sums[i] += v;
        }
    }
    let mean_component_ns = component_names(&layers)
        .into_iter()
        .zip(sums)
        .map(|(name, s)| (name, s.checked_div(n).unwrap_or(0)))
        .collect();
    let mut tids: Vec<u32> = profiles.iter().map(|p| p.tid).collect();
    tids.sort_unstable();
    tids.dedup();
    ReportSummary {
        requests: profiles.len(),
        threads: tids.len(),
        layers,
        latency,
        mean_component_ns,
        irq_count: profiles.iter().map(|p| p.irq_count).sum(),
        irq_ns: profiles.iter().map(|p| p.irq_ns).sum(),
        tails,
        windows,
        window: opts.window,
        tail_threshold_ns: opts.tail_threshold_ns,
        incomplete_requests: stats.incomplete,
        discarded_irqs: stats.discarded_irqs,
        discarded_records: stats.discarded_records,
    }
}

fn latency_csv(ordered: &[&RequestProfile], layers: &[String]) -> String {
    let mut out = String::from("rid,tid,start_ns,total_ns");
    for l in layers {
        let _ = write!(out, ",{l}_ns");
    }
    out.push_str(",irq_ns,irq_count,sched_ns,io_wait_ns,unattributed_ns,cpi\n");
    for p in ordered {
        let _ = write!(out, "{},{},{},{}", p.rid, p.tid, p.start_ns, p.total_ns);
        for l in &p.layers {
            let _ = write!(out, ",{}", l.self_ns);
        }
        let cpi = request_cpi(p).map(|c| format!("{c:.3}")).unwrap_or_default();
        let _ = writeln!(out, ",{},{},{},{},{},{}", p.irq_ns, p.irq_count, p.sched_ns, p.io_wait_ns, p.unattributed_ns, cpi);
    }
    out
}

fn windows_csv(series: &WindowedSeries) -> String {
    let mut out = String::from("window,first_request,requests,tid,count,p99_ns\n");
    for w in &series.windows {
        for t in &w.threads {
            let p99 = t.p99_ns.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", w.index, w.first_request, w.requests, t.tid, t.count, p99);
        }
    }
    out
}

/// Keeps at most `max` requests: the slowest of each consecutive bucket.
fn representatives<'a>(ordered: &[&'a RequestProfile], max: usize) -> Vec<&'a RequestProfile> {
    let max = max.max(1);
    if ordered.len() <= max {
        return ordered.to_vec();
    }
    let bucket = ordered.len().div_ceil(max);
    ordered.chunks(bucket).map(|c| *c.iter().max_by_key(|p| (p.total_ns, std::cmp::Reverse(p.start_ns))).unwrap()).collect()
}

const W: f64 = 960.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 60.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn axes(svg: &mut Svg, y_max: f64, label: &str) {
    let plot_h = H - TOP - BOTTOM;
    svg.line(LEFT, TOP, LEFT, H - BOTTOM, "#333333");
    svg.line(LEFT, H - BOTTOM, W - RIGHT, H - BOTTOM, "#333333");
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = H - BOTTOM - plot_h * i as f64 / 4.0;
        svg.line(LEFT - 4.0, y, LEFT, y, "#333333");
        svg.text(LEFT - 6.0, y + 4.0, &format!("{v:.0}"), "end");
    }
    svg.text(14.0, TOP - 12.0, label, "start");
}

fn layers_svg(reps: &[&RequestProfile], names: &[String], total: usize) -> String {
    let mut svg = Svg::new(W, H, "Per-request latency breakdown by layer");
    let y_max = nice_max(reps.iter().map(|p| p.total_ns).max().unwrap_or(0) as f64);
    axes(&mut svg, y_max, "latency (ns)");
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let bar = if reps.is_empty() { 0.0 } else { plot_w / reps.len() as f64 };
    for (i, p) in reps.iter().enumerate() {
        let x = LEFT + bar * i as f64;
        let mut y = H - BOTTOM;
        for (k, (name, v)) in components(p).into_iter().enumerate() {
            if v == 0 {
                continue;
            }
            let h = plot_h * v as f64 / y_max;
            y -= h;
            svg.rect(x, y, bar, h, PALETTE[k % PALETTE.len()], Some(&format!("rid {} {name} {v} ns", p.rid)));
        }
    }
    let caption = if reps.len() < total {
        format!("{} requests, slowest of each bucket of {} shown", total, total.div_ceil(reps.len().max(1)))
    } else {
        format!("{total} requests")
    };
    svg.text(W / 2.0, H - 14.0, &caption, "middle");
    let legend: Vec<(&str, &str)> = names.iter().enumerate().map(|(k, n)| (n.as_str(), PALETTE[k % PALETTE.len()])).collect();
    svg.legend(LEFT + 120.0, TOP - 12.0, &legend);
    svg.finish()
}

fn latency_cpi_svg(reps: &[&RequestProfile]) -> String {
    let mut svg = Svg::new(W, H, "Per-request latency (solid) and CPI (dotted)");
    let lat_max = nice_max(reps.iter().map(|p| p.total_ns).max().unwrap_or(0) as f64);
    let cpis: Vec<Option<f64>> = reps.iter().map(|p| request_cpi(p)).collect();
    let cpi_max = nice_max(cpis.iter().flatten().fold(0.0f64, |a, b| a.max(*b)));
    axes(&mut svg, lat_max, "latency (ns)");
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    svg.line(W - RIGHT, TOP, W - RIGHT, H - BOTTOM, "#333333");
    for i in 0..=4 {
        let y = H - BOTTOM - plot_h * i as f64 / 4.0;
        svg.text(W - RIGHT + 6.0, y + 4.0, &format!("{:.2}", cpi_max * i as f64 / 4.0), "start");
    }
    svg.text(W - 14.0, TOP - 12.0, "CPI", "end");
    let step = if reps.len() > 1 { plot_w / (reps.len() - 1) as f64 } else { 0.0 };
    let lat: Vec<(f64, f64)> = reps
        .iter()
        .enumerate()
        .map(|(i, p)| (LEFT + step * i as f64, H - BOTTOM - plot_h * p.total_ns as f64 / lat_max))
        .collect();
    let cpi: Vec<(f64, f64)> = cpis
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (LEFT + step * i as f64, H - BOTTOM - plot_h * c / cpi_max)))
        .collect();
    svg.polyline(&lat, PALETTE[0], false);
    svg.polyline(&cpi, PALETTE[1], true);
    svg.legend(LEFT + 120.0, TOP - 12.0, &[("latency", PALETTE[0]), ("CPI", PALETTE[1])]);
    svg.text(W / 2.0, H - 14.0, "request (start-time order)", "middle");
    svg.finish()
}

fn windows_svg(series: &WindowedSeries) -> String {
    let mut svg = Svg::new(W, H, "Per-thread 99th-percentile latency per window");
    let y_max = nice_max(
        series.windows.iter().flat_map(|w| w.threads.iter().filter_map(|t| t.p99_ns)).max().unwrap_or(0) as f64,
    );
    axes(&mut svg, y_max, "p99 latency (ns)");
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let groups = series.windows.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar = group_w * 0.8 / series.tids.len().max(1) as f64;
    for (wi, w) in series.windows.iter().enumerate() {
        let x0 = LEFT + group_w * wi as f64 + group_w * 0.1;
        for (ti, t) in w.threads.iter().enumerate() {
            if let Some(v) = t.p99_ns {
                let h = plot_h * v as f64 / y_max;
                let tip = format!("window {} tid {} p99 {} ns", w.index + 1, t.tid, v);
                svg.rect(x0 + bar * ti as f64, H - BOTTOM - h, bar, h, PALETTE[ti % PALETTE.len()], Some(&tip));
            }
        }
        svg.text(x0 + group_w * 0.4, H - BOTTOM + 14.0, &(w.index + 1).to_string(), "middle");
    }
    let labels: Vec<String> = series.tids.iter().map(|t| format!("tid {t}")).collect();
    let legend: Vec<(&str, &str)> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), PALETTE[i % PALETTE.len()])).collect();
    svg.legend(LEFT + 160.0, TOP - 12.0, &legend);
    svg.text(W / 2.0, H - 14.0, &format!("window ({} requests each)", series.window), "middle");
    svg.finish()
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct TailsDoc<'a> {
    threshold_ns: u64,
    tails: &'a [TailEntry],
}

#[derive(Serialize)]
struct FairnessDoc<'a> {
    total_irq_count: u64,
    total_irq_ns: u64,
    #[serde(flatten)]
    table: &'a FairnessTable,
}

/// Writes the static report into `outdir` (created if missing) and returns
/// the summary. Output depends only on the inputs.
pub fn emit_report(
    profiles: &[RequestProfile],
    stats: &GroupStats,
    opts: &ReportOptions,
    outdir: &Path,
) -> Result<ReportSummary, ReportError> {
    fs::create_dir_all(outdir).map_err(|source| ReportError::Io { path: outdir.to_path_buf(), source })?;
    let layers = layer_names(profiles);
    let ordered = start_order(profiles);
    let series = windowed_p99(profiles, opts.window);
    let fairness = fairness_table(profiles);
    let tails = tail_decompose(profiles, opts.tail_threshold_ns);
    let summary = summarize(profiles, stats, opts, tails.len(), series.windows.len());
    let reps = representatives(&ordered, opts.max_bars);
    let names = component_names(&layers);

    let files: Vec<(&str, String)> = vec![
        ("latency_series.csv", latency_csv(&ordered, &layers)),
        ("windowed_p99.csv", windows_csv(&series)),
        (
            "fairness.json",
            json(&FairnessDoc {
                total_irq_count: fairness.rows.iter().map(|r| r.irq_count).sum(),
                total_irq_ns: fairness.total_irq_ns(),
                table: &fairness,
            }),
        ),
        ("tails.json", json(&TailsDoc { threshold_ns: opts.tail_threshold_ns, tails: &tails })),
        ("summary.json", json(&summary)),
        ("layers.svg", layers_svg(&reps, &names, ordered.len())),
        ("latency_cpi.svg", latency_cpi_svg(&reps)),
        ("windows.svg", windows_svg(&series)),
    ];
    for (name, body) in files {
        let path = outdir.join(name);
        fs::write(&path, body).map_err(|source| ReportError::Io { path, source })?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::tests::profile;

    const FILES: [&str; 8] = [
        "latency_series.csv",
        "windowed_p99.csv",
        "fairness.json",
        "tails.json",
        "summary.json",
        "layers.svg",
        "latency_cpi.svg",
        "windows.svg",
    ];

    #[test]
    fn empty_report_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let s = emit_report(&[], &GroupStats::default(), &ReportOptions::default(), dir.path()).unwrap();
        assert_eq!(s.requests, 0);
        for f in FILES {
            let body = fs::read_to_string(dir.path().join(f)).unwrap();
            if f.ends_with(".svg") {
                roxmltree::Document::parse(&body).unwrap();
            }
            if f.ends_with(".json") {
                serde_json::from_str::<serde_json::Value>(&body).unwrap();
            }
        }
        assert_eq!(fs::read_to_string(dir.path().join("windowed_p99.csv")).unwrap().lines().count(), 1);
    }

    #[test]
    fn report_is_deterministic_and_parses() {
        let ps: Vec<_> = (0..3000u64)
            .map(|i| profile(i + 1, 1 + (i % 2) as u32, i * 100, &[("vfs", 100 + i % 7), ("mm", 50)], (i % 13) * 3))
            .collect();
        let opts = ReportOptions { window: 500, tail_threshold_ns: 180, max_bars: 200 };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        emit_report(&ps, &GroupStats::default(), &opts, a.path()).unwrap();
        let mut rev = ps.clone();
        rev.reverse();
        emit_report(&rev, &GroupStats::default(), &opts, b.path()).unwrap();
        for f in FILES {
            let x = fs::read(a.path().join(f)).unwrap();
            assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
            if f.ends_with(".svg") {
                let doc = String::from_utf8(x).unwrap();
                let parsed = roxmltree::Document::parse(&doc).unwrap();
                assert_eq!(parsed.root_element().tag_name().name(), "svg");
            }
        }
        let csv = fs::read_to_string(a.path().join("latency_series.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3001);
    }

    #[test]
    fn representatives_keep_the_slowest() {
        let ps: Vec<_> = (0..10u64).map(|i| profile(i + 1, 1, i, &[("vfs", if i == 7 { 900 } else { 10 })], 0)).collect();
        let ordered = start_order(&ps);
        let reps = representatives(&ordered, 3);
        assert_eq!(reps.len(), 3);
        assert!(reps.iter().any(|p| p.total_ns == 900));
    }
}
