//! Statistics over request profiles: percentiles, windowed per-thread p99,
//! the IRQ fairness table, tail attribution, and report emission.

mod report;
mod svg;

pub use report::{emit_report, ReportError, ReportOptions, ReportSummary};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyze::{cpi_of, CpiScope, RequestProfile};
use crate::config::{IRQ_BUCKET, SCHED_BUCKET, WAIT_LAYER};
use crate::trace::RequestId;

pub const DEFAULT_WINDOW: usize = 6000;
pub const DEFAULT_TAIL_THRESHOLD_NS: u64 = 25_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("percentile of an empty set")]
    Empty,
    #[error("quantile {0} is outside (0, 1]")]
    BadQuantile(f64),
}

/// Nearest-rank percentile: the `ceil(q * n)`-th smallest value. `q` is
/// taken to six decimal places so the rank is computed in integers.
pub fn percentile(values: &[u64], q: f64) -> Result<u64, StatsError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(StatsError::BadQuantile(q));
    }
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut v = values.to_vec();
    let k = nearest_rank(v.len(), q);
    let (_, kth, _) = v.select_nth_unstable(k - 1);
    Ok(*kth)
}

/// 1-based nearest rank for `n` samples.
pub fn nearest_rank(n: usize, q: f64) -> usize {
    let micro = (q * 1e6).round() as u128;
    let rank = (micro * n as u128).div_ceil(1_000_000) as usize;
    rank.clamp(1, n.max(1))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadWindow {
    pub tid: u32,
    pub count: usize,
    /// Absent when the thread issued no request in the window.
    pub p99_ns: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    /// Position of the window's first request in start-time order.
    pub first_request: usize,
    pub requests: usize,
    pub threads: Vec<ThreadWindow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowedSeries {
    pub window: usize,
    pub tids: Vec<u32>,
    pub windows: Vec<Window>,
}

/// Profiles in start-time order (ties broken by rid).
pub fn start_order(profiles: &[RequestProfile]) -> Vec<&RequestProfile> {
    let mut v: Vec<&RequestProfile> = profiles.iter().collect();
    v.sort_by_key(|p| (p.start_ns, p.rid));
    v
}

/// Cuts the requests, in start-time order, into consecutive windows of
/// `window` requests (the last may be shorter) and takes each thread's p99
/// within each window.
pub fn windowed_p99(profiles: &[RequestProfile], window: usize) -> WindowedSeries {
    let window = window.max(1);
    let ordered = start_order(profiles);
    let tids: Vec<u32> = {
        let mut t: Vec<u32> = profiles.iter().map(|p| p.tid).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    let windows = ordered
        .chunks(window)
        .enumerate()
        .map(|(index, chunk)| {
            let mut by_tid: BTreeMap<u32, Vec<u64>> = tids.iter().map(|&t| (t, Vec::new())).collect();
            for p in chunk {
                by_tid.get_mut(&p.tid).unwrap().push(p.total_ns);
            }
            Window {
                index,
                first_request: index * window,
                requests: chunk.len(),
                threads: by_tid
                    .into_iter()
                    .map(|(tid, v)| ThreadWindow { tid, count: v.len(), p99_ns: percentile(&v, 0.99).ok() })
                    .collect(),
            }
        })
        .collect();
    WindowedSeries { window, tids, windows }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub tid: u32,
    pub requests: u64,
    pub irq_count: u64,
    pub irq_ns: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessTable {
    /// Sorted by tid.
    pub rows: Vec<FairnessRow>,
}

impl FairnessTable {
    pub fn total_irq_ns(&self) -> u64 {
        self.rows.iter().map(|r| r.irq_ns).sum()
    }

    pub fn counts(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.irq_count).collect()
    }
}

/// IRQ count and handling time charged to each thread's requests.
pub fn fairness_table(profiles: &[RequestProfile]) -> FairnessTable {
    let mut rows: BTreeMap<u32, FairnessRow> = BTreeMap::new();
    for p in profiles {
        let row = rows.entry(p.tid).or_insert(FairnessRow { tid: p.tid, requests: 0, irq_count: 0, irq_ns: 0 });
        row.requests += 1;
        row.irq_count += p.irq_count;
        row.irq_ns += p.irq_ns;
    }
    FairnessTable { rows: rows.into_values().collect() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEntry {
    pub rid: RequestId,
    pub tid: u32,
    pub start_ns: u64,
    pub total_ns: u64,
    pub dominant: String,
    pub dominant_ns: u64,
    /// dominant_ns / total_ns.
    pub share: f64,
}

/// Components competing for "dominant": each layer in description order
/// (the wait layer together with io wait), then irq, then sched.
pub fn tail_components(p: &RequestProfile) -> Vec<(String, u64)> {
    let mut out: Vec<(String, u64)> = p
        .layers
        .iter()
        .map(|l| {
            let extra = if l.layer == WAIT_LAYER { p.io_wait_ns } else { 0 };
            (l.layer.clone(), l.self_ns + extra)
        })
        .collect();
    if !p.layers.iter().any(|l| l.layer == WAIT_LAYER) && p.io_wait_ns > 0 {
        out.push((WAIT_LAYER.to_owned(), p.io_wait_ns));
    }
    out.push((IRQ_BUCKET.to_owned(), p.irq_ns));
    out.push((SCHED_BUCKET.to_owned(), p.sched_ns));
    out
}

/// The largest component; ties go to the earlier one.
pub fn dominant_component(p: &RequestProfile) -> (String, u64) {
    let mut best: Option<(String, u64)> = None;
    for (name, ns) in tail_components(p) {
        if !best.as_ref().is_some_and(|(_, b)| ns <= *b) {
            best = Some((name, ns));
        }
    }
    best.unwrap_or_else(|| (SCHED_BUCKET.to_owned(), 0))
}

/// Requests slower than `threshold_ns`, each with its dominant component,
/// in start-time order.
pub fn tail_decompose(profiles: &[RequestProfile], threshold_ns: u64) -> Vec<TailEntry> {
    start_order(profiles)
        .into_iter()
        .filter(|p| p.total_ns > threshold_ns)
        .map(|p| {
            let (dominant, dominant_ns) = dominant_component(p);
            TailEntry {
                rid: p.rid,
                tid: p.tid,
                start_ns: p.start_ns,
                total_ns: p.total_ns,
                dominant,
                dominant_ns,
                share: dominant_ns as f64 / p.total_ns as f64,
            }
        })
        .collect()
}

/// Request-scope CPI, if the request retired any instructions.
pub fn request_cpi(p: &RequestProfile) -> Option<f64> {
    cpi_of(p, CpiScope::Request).map(|c| c.ratio())
}
