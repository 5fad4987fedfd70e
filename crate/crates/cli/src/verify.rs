//! Stream validation plus analyzer-versus-oracle comparison.

use anyhow::Result;
use rayon::prelude::*;
use relay_core::analyze::{group_by_rid, AnalysisError};
use relay_core::config::LayerMap;
use relay_core::trace::validate_stream;
use relay_core::transport::read_trace_file;
use relay_core::{compute_request_profile, oracle_profile, RequestProfile, TraceRecord};
use serde::Serialize;
use serde_json::json;

use crate::commands::load_layers;
use crate::{CheckFailed, VerifyArgs};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub rid: u64,
    /// First differing field: a layer name, a bucket such as `irq_ns`, or
    /// `error` when only one side failed.
    pub bucket: String,
    pub analyzer: String,
    pub oracle: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub records: usize,
    pub requests: usize,
    pub incomplete: usize,
    pub violations: usize,
    pub first_violation: Option<String>,
    pub divergences: usize,
    pub first_divergence: Option<Divergence>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations == 0 && self.divergences == 0
    }
}

fn field<T: ToString>(rid: u64, bucket: &str, a: T, o: T) -> Divergence {
    Divergence { rid, bucket: bucket.to_owned(), analyzer: a.to_string(), oracle: o.to_string() }
}

/// The first field where the two profiles differ.
pub fn first_difference(a: &RequestProfile, o: &RequestProfile) -> Option<Divergence> {
    let rid = a.rid.0;
    let scalars = [
        ("total_ns", a.total_ns, o.total_ns),
        ("start_ns", a.start_ns, o.start_ns),
        ("end_ns", a.end_ns, o.end_ns),
        ("io_wait_ns", a.io_wait_ns, o.io_wait_ns),
        ("irq_ns", a.irq_ns, o.irq_ns),
        ("irq_count", a.irq_count, o.irq_count),
        ("sched_ns", a.sched_ns, o.sched_ns),
        ("unattributed_ns", a.unattributed_ns, o.unattributed_ns),
    ];
    if let Some((name, x, y)) = scalars.iter().find(|(_, x, y)| x != y) {
        return Some(field(rid, name, x, y));
    }
    if a.layers.len() != o.layers.len() {
        return Some(field(rid, "layers", a.layers.len(), o.layers.len()));
    }
    for (la, lo) in a.layers.iter().zip(&o.layers) {
        if la != lo {
            return Some(field(rid, &la.layer, format!("{la:?}"), format!("{lo:?}")));
        }
    }
    if a != o {
        return Some(field(rid, "identity", format!("{:?}", (a.pid, a.tid, a.cpu)), format!("{:?}", (o.pid, o.tid, o.cpu))));
    }
    None
}

fn compare(rid: u64, a: &Result<RequestProfile, AnalysisError>, o: &Result<RequestProfile, AnalysisError>) -> Option<Divergence> {
    match (a, o) {
        (Ok(a), Ok(o)) => first_difference(a, o),
        (Err(_), Err(_)) => None,
        (a, o) => Some(field(rid, "error", format!("{a:?}"), format!("{o:?}"))),
    }
}

pub fn verify(records: &[TraceRecord], layers: &LayerMap) -> VerifyReport {
    let validation = validate_stream(records);
    let grouping = group_by_rid(records);
    let found: Vec<Option<Divergence>> = grouping
        .requests
        .par_iter()
        .map(|r| compare(r.rid.0, &compute_request_profile(&r.events, layers), &oracle_profile(&r.events, layers)))
        .collect();
    let divergences: Vec<Divergence> = found.into_iter().flatten().collect();
    VerifyReport {
        records: records.len(),
        requests: grouping.requests.len(),
        incomplete: grouping.incomplete.len(),
        violations: validation.errors.len(),
        first_violation: validation.errors.first().map(|v| format!("record {}: {:?}: {}", v.index, v.code, v.message)),
        divergences: divergences.len(),
        first_divergence: divergences.into_iter().next(),
    }
}

pub fn run(a: VerifyArgs) -> Result<()> {
    let (records, strings) = read_trace_file(&a.trace)?;
    let layers = load_layers(&a.layers, &strings)?;
    let report = verify(&records, &layers);
    println!("{}", serde_json::to_string(&report)?);
    if !report.ok() {
        return Err(CheckFailed(json!(report)).into());
    }
    Ok(())
}
