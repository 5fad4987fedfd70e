//! Back-end analysis: group records by request id, then attribute each
//! request's time to layers, interference buckets and device wait.
//!
//! [`compute_request_profile`] is the production stack walk;
//! [`oracle_profile`] is a slower segment sweep over the same events, kept
//! deliberately separate so the two can be checked against each other.

mod group;
mod oracle;
mod profile;
mod stack;

pub use group::{group_by_rid, GroupStats, Grouping, IncompleteRequest, RequestEvents};
pub use oracle::{oracle_profile, segment_count};
pub use profile::{cpi_of, Cpi, CpiScope, LayerStat, RequestProfile};
pub use stack::compute_request_profile;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::LayerMap;
use crate::trace::{EventKind, RequestId, TraceRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalysisError {
    #[error("empty event list")]
    Empty,
    #[error("rid {rid}: event {index} ({kind}): {message}")]
    Malformed { rid: RequestId, index: usize, kind: EventKind, message: String },
    #[error("rid {rid}: negative self time in function {func} at event {index}")]
    NegativeSelf { rid: RequestId, func: u32, index: usize },
}

impl AnalysisError {
    pub(crate) fn malformed(rid: RequestId, index: usize, ev: &TraceRecord, message: impl Into<String>) -> Self {
        AnalysisError::Malformed { rid, index, kind: ev.kind, message: message.into() }
    }
}

/// Result of analyzing a whole trace.
#[derive(Clone, Debug, Default)]
pub struct Analysis {
    /// Complete requests in syscall-entry order.
    pub profiles: Vec<RequestProfile>,
    /// Requests excluded from statistics, with the reason.
    pub incomplete: Vec<IncompleteRequest>,
    pub stats: GroupStats,
}

/// Groups `records` and profiles every complete request. Requests whose
/// events cannot be attributed are moved to `incomplete`.
pub fn analyze(records: &[TraceRecord], layers: &LayerMap) -> Analysis {
    let grouping = group_by_rid(records);
    let results: Vec<_> = grouping
        .requests
        .par_iter()
        .map(|req| compute_request_profile(&req.events, layers))
        .collect();
    let mut analysis = Analysis { stats: grouping.stats, incomplete: grouping.incomplete, ..Default::default() };
    for (req, result) in grouping.requests.iter().zip(results) {
        match result {
            Ok(p) => analysis.profiles.push(p),
            Err(e) => analysis.incomplete.push(IncompleteRequest { rid: req.rid, reason: e.to_string() }),
        }
    }
    analysis.stats.incomplete = analysis.incomplete.len() as u64;
    analysis
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::config::{parse_layer_description, LayerMap};
    use crate::trace::{EventKind, FunctionId, HwSample, RequestId, StringTable, TraceRecord};

    pub const RID: RequestId = RequestId(1 << 8);

    /// Layers: vfs = vfs_read, mm = filemap_read; ids 1 and 2.
    pub fn layers() -> LayerMap {
        let ld = parse_layer_description("layer vfs = vfs_read\nlayer mm = filemap_read\nlayer io = io_schedule")
            .unwrap();
        let mut t = StringTable::new();
        t.intern("vfs_read").unwrap();
        t.intern("filemap_read").unwrap();
        t.intern("io_schedule").unwrap();
        ld.resolve(&t)
    }

    pub fn ev(kind: EventKind, func: u32, ts: u64) -> TraceRecord {
        TraceRecord {
            kind,
            func: FunctionId(func),
            pid: 10,
            tid: 11,
            cpu: 0,
            rid: RID,
            ts,
            hw: HwSample { cycles: ts * 2, instructions: ts },
        }
    }

    pub fn irq(kind: EventKind, ts: u64) -> TraceRecord {
        TraceRecord { rid: RequestId::NONE, ..ev(kind, 99, ts) }
    }

    /// SYSCALL_ENTER at `start`, `body`, SYSCALL_EXIT at `end`.
    pub fn request(start: u64, body: Vec<TraceRecord>, end: u64) -> Vec<TraceRecord> {
        let mut v = vec![ev(EventKind::SyscallEnter, 50, start)];
        v.extend(body);
        v.push(ev(EventKind::SyscallExit, 50, end));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::trace::EventKind::*;

    fn both(events: &[TraceRecord]) -> RequestProfile {
        let map = layers();
        let a = compute_request_profile(events, &map).unwrap();
        let b = oracle_profile(events, &map).unwrap();
        assert_eq!(a, b);
        a
    }

    #[test]
    fn single_frame() {
        let p = both(&request(0, vec![ev(FuncEntry, 1, 0), ev(FuncExit, 1, 100)], 100));
        assert_eq!(p.layer_ns("vfs"), Some(100));
        assert_eq!(p.total_ns, 100);
        assert_eq!(p.unattributed_ns, 0);
    }

    #[test]
    fn child_time_is_subtracted() {
        let p = both(&request(
            0,
            vec![ev(FuncEntry, 1, 0), ev(FuncEntry, 2, 20), ev(FuncExit, 2, 80), ev(FuncExit, 1, 100)],
            100,
        ));
        assert_eq!(p.layer_ns("vfs"), Some(40));
        assert_eq!(p.layer_ns("mm"), Some(60));
    }

    #[test]
    fn irq_is_charged_separately() {
        let p = both(&request(
            0,
            vec![ev(FuncEntry, 1, 0), irq(IrqEnter, 30), irq(IrqExit, 50), ev(FuncExit, 1, 100)],
            100,
        ));
        assert_eq!(p.layer_ns("vfs"), Some(80));
        assert_eq!(p.irq_ns, 20);
        assert_eq!(p.irq_count, 1);
        assert!(p.is_conserved());
    }

    #[test]
    fn offcpu_window_is_io_wait_and_plain_preemption_is_sched() {
        let p = both(&request(
            0,
            vec![
                ev(FuncEntry, 1, 0),
                ev(OffcpuSubmit, 7, 10),
                ev(FuncEntry, 3, 15),
                irq(SchedOut, 20),
                ev(OffcpuComplete, 8, 500),
                irq(SchedIn, 600),
                ev(FuncExit, 3, 610),
                irq(SchedOut, 700),
                irq(SchedIn, 750),
                ev(FuncExit, 1, 800),
            ],
            800,
        ));
        assert_eq!(p.io_wait_ns, 580);
        assert_eq!(p.sched_ns, 50);
        assert_eq!(p.layer_ns("io"), Some(15));
        assert_eq!(p.layer_ns("vfs"), Some(155));
        assert!(p.is_conserved());
    }

    #[test]
    fn irq_inside_offcpu_window_is_not_io_wait() {
        let p = both(&request(
            0,
            vec![
                ev(FuncEntry, 1, 0),
                ev(OffcpuSubmit, 7, 10),
                irq(SchedOut, 20),
                irq(IrqEnter, 100),
                ev(OffcpuComplete, 8, 110),
                irq(IrqExit, 130),
                irq(SchedIn, 200),
                ev(FuncExit, 1, 300),
            ],
            300,
        ));
        assert_eq!(p.irq_ns, 30);
        assert_eq!(p.io_wait_ns, 150);
        assert_eq!(p.layer_ns("vfs"), Some(120));
    }

    #[test]
    fn time_outside_frames_is_unattributed() {
        let p = both(&request(0, vec![ev(FuncEntry, 1, 10), ev(FuncExit, 1, 90)], 100));
        assert_eq!(p.unattributed_ns, 20);
        assert_eq!(p.layer_ns("vfs"), Some(80));
        let q = both(&request(0, vec![ev(FuncEntry, 42, 10), ev(FuncExit, 42, 90)], 100));
        assert_eq!(q.unattributed_ns, 100);
    }

    #[test]
    fn nested_irqs_count_each_but_charge_outer_span() {
        let p = both(&request(
            0,
            vec![
                ev(FuncEntry, 1, 0),
                irq(IrqEnter, 10),
                irq(IrqEnter, 15),
                irq(IrqExit, 20),
                irq(IrqExit, 40),
                ev(FuncExit, 1, 100),
            ],
            100,
        ));
        assert_eq!(p.irq_count, 2);
        assert_eq!(p.irq_ns, 30);
    }

    #[test]
    fn malformed_inputs_fail_in_both() {
        let map = layers();
        let cases = vec![
            vec![],
            request(0, vec![ev(FuncEntry, 1, 0)], 100),
            request(0, vec![ev(FuncExit, 1, 100)], 100),
            request(0, vec![ev(FuncEntry, 1, 0), ev(FuncEntry, 2, 1), ev(FuncExit, 1, 2), ev(FuncExit, 2, 3)], 9),
            request(0, vec![irq(IrqEnter, 1), ev(FuncEntry, 1, 2), ev(FuncExit, 1, 3), irq(IrqExit, 4)], 9),
            request(0, vec![irq(SchedOut, 1)], 9),
            request(0, vec![irq(SchedIn, 1)], 9),
            vec![ev(FuncEntry, 1, 0)],
        ];
        for c in cases {
            assert!(compute_request_profile(&c, &map).is_err(), "{c:?}");
            assert!(oracle_profile(&c, &map).is_err(), "{c:?}");
        }
    }

    #[test]
    fn negative_self_is_a_hard_error() {
        // Child entered before its parent by timestamp: malformed, must not
        // produce a profile.
        let map = layers();
        let events = request(
            0,
            vec![ev(FuncEntry, 1, 50), ev(FuncEntry, 2, 10), ev(FuncExit, 2, 90), ev(FuncExit, 1, 60)],
            100,
        );
        assert!(matches!(
            compute_request_profile(&events, &map),
            Err(AnalysisError::NegativeSelf { .. }) | Err(AnalysisError::Malformed { .. })
        ));
    }

    #[test]
    fn hw_deltas_follow_the_frame_on_cpu() {
        let p = both(&request(
            0,
            vec![ev(FuncEntry, 1, 0), ev(FuncEntry, 2, 20), ev(FuncExit, 2, 80), ev(FuncExit, 1, 100)],
            100,
        ));
        let vfs = &p.layers[0];
        let mm = &p.layers[1];
        assert_eq!((vfs.cycles, vfs.instructions), (80, 40));
        assert_eq!((mm.cycles, mm.instructions), (120, 60));
        assert_eq!(cpi_of(&p, CpiScope::Request).unwrap().to_string(), "2.000");
    }
}
