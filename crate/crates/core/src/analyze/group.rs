use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::trace::{EventKind, RequestId, TraceRecord};

/// Events of one request in analysis order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestEvents {
    pub rid: RequestId,
    pub events: Vec<TraceRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompleteRequest {
    pub rid: RequestId,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    /// IRQ_ENTER records that hit a cpu with no live traced request.
    pub discarded_irqs: u64,
    /// Other records that could not be attributed to an open request.
    pub discarded_records: u64,
    /// Requests excluded from statistics.
    pub incomplete: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Grouping {
    /// Complete requests, in syscall-entry order.
    pub requests: Vec<RequestEvents>,
    pub incomplete: Vec<IncompleteRequest>,
    pub stats: GroupStats,
}

/// Orders records by timestamp, breaking ties by cpu and then by position in
/// the input. Cross-cpu interleaving of the input therefore does not affect
/// the result as long as each cpu's own order is preserved.
pub fn analysis_order(records: &[TraceRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| (records[i].ts, records[i].cpu, i));
    order
}

/// Splits a stream into per-request event lists.
///
/// Records carrying a rid go to that request. Unattributed IRQ records are
/// charged to the request live on their cpu at IRQ_ENTER (live: inside its
/// syscall and not switched out); scheduler records are charged to the open
/// request of the switching thread. Anything else without a home is counted
/// and dropped. Requests without SYSCALL_EXIT are reported as incomplete.
pub fn group_by_rid(records: &[TraceRecord]) -> Grouping {
    let mut open: HashMap<RequestId, usize> = HashMap::new();
    let mut groups: Vec<(RequestEvents, bool)> = Vec::new();
    let mut by_tid: HashMap<u32, RequestId> = HashMap::new();
    let mut live: HashMap<u8, RequestId> = HashMap::new();
    let mut irq_owner: HashMap<u8, Vec<Option<RequestId>>> = HashMap::new();
    let mut stats = GroupStats::default();

    for i in analysis_order(records) {
        let r = records[i];
        let target = match r.kind {
            EventKind::SyscallEnter => {
                if open.contains_key(&r.rid) || r.rid.is_none() {
                    stats.discarded_records += 1;
                    None
                } else {
                    open.insert(r.rid, groups.len());
                    groups.push((RequestEvents { rid: r.rid, events: Vec::new() }, false));
                    by_tid.insert(r.tid, r.rid);
                    live.insert(r.cpu, r.rid);
                    Some(r.rid)
                }
            }
            EventKind::IrqEnter if r.rid.is_none() => {
                let owner = live.get(&r.cpu).copied();
                irq_owner.entry(r.cpu).or_default().push(owner);
                if owner.is_none() {
                    stats.discarded_irqs += 1;
                }
                owner
            }
            EventKind::IrqExit if r.rid.is_none() => irq_owner.get_mut(&r.cpu).and_then(Vec::pop).flatten(),
            EventKind::SchedOut | EventKind::SchedIn if r.rid.is_none() => {
                let owner = by_tid.get(&r.tid).copied();
                if let Some(rid) = owner {
                    if r.kind == EventKind::SchedOut {
                        live.remove(&r.cpu);
                    } else {
                        live.insert(r.cpu, rid);
                    }
                }
                owner
            }
            _ if r.rid.is_none() => None,
            _ => open.contains_key(&r.rid).then_some(r.rid),
        };

        let Some(rid) = target else {
            if !(r.kind == EventKind::IrqEnter || r.kind == EventKind::IrqExit) {
                stats.discarded_records += 1;
            }
            continue;
        };
        let slot = open[&rid];
        groups[slot].0.events.push(r);
        if r.kind == EventKind::SyscallExit {
            groups[slot].1 = true;
            open.remove(&rid);
            if by_tid.get(&r.tid) == Some(&rid) {
                by_tid.remove(&r.tid);
            }
            if live.get(&r.cpu) == Some(&rid) {
                live.remove(&r.cpu);
            }
        }
    }

    let mut grouping = Grouping { stats, ..Default::default() };
    for (req, complete) in groups {
        if complete {
            grouping.requests.push(req);
        } else {
            grouping.incomplete.push(IncompleteRequest { rid: req.rid, reason: "missing SYSCALL_EXIT".into() });
        }
    }
    grouping.stats.incomplete = grouping.incomplete.len() as u64;
    grouping
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{FunctionId, HwSample};
    use EventKind::*;

    fn r(kind: EventKind, tid: u32, cpu: u8, rid: u64, ts: u64) -> TraceRecord {
        TraceRecord {
            kind,
            func: FunctionId(1),
            pid: 1,
            tid,
            cpu,
            rid: RequestId(rid),
            ts,
            hw: HwSample::default(),
        }
    }

    #[test]
    fn single_request_is_one_group() {
        let g = group_by_rid(&[r(SyscallEnter, 1, 0, 256, 0), r(FuncEntry, 1, 0, 256, 1), r(FuncExit, 1, 0, 256, 2), r(SyscallExit, 1, 0, 256, 3)]);
        assert_eq!(g.requests.len(), 1);
        assert_eq!(g.requests[0].events.len(), 4);
    }

    #[test]
    fn interleaved_threads_match_per_rid_filter() {
        let a = 10 << 8;
        let b = (12 << 8) | 1;
        let stream = vec![
            r(SyscallEnter, 1, 0, a, 10),
            r(SyscallEnter, 2, 1, b, 12),
            r(FuncEntry, 2, 1, b, 13),
            r(FuncEntry, 1, 0, a, 14),
            r(FuncExit, 1, 0, a, 20),
            r(FuncExit, 2, 1, b, 21),
            r(SyscallExit, 2, 1, b, 22),
            r(SyscallExit, 1, 0, a, 30),
        ];
        let g = group_by_rid(&stream);
        assert_eq!(g.requests.len(), 2);
        for req in &g.requests {
            let filtered: Vec<_> = stream.iter().copied().filter(|x| x.rid == req.rid).collect();
            assert_eq!(req.events, filtered);
        }
        // cross-cpu reinterleaving does not change the grouping
        let mut shuffled = stream.clone();
        shuffled.sort_by_key(|x| (x.cpu, x.ts));
        let g2 = group_by_rid(&shuffled);
        assert_eq!(g.requests, g2.requests);
    }

    #[test]
    fn irq_on_idle_cpu_is_discarded() {
        let g = group_by_rid(&[r(IrqEnter, 0, 3, 0, 5), r(IrqExit, 0, 3, 0, 9)]);
        assert!(g.requests.is_empty());
        assert_eq!(g.stats.discarded_irqs, 1);
    }

    #[test]
    fn irq_goes_to_live_request_but_not_to_sleeper() {
        let a = 1 << 8;
        let stream = vec![
            r(SyscallEnter, 1, 0, a, 1),
            r(IrqEnter, 0, 0, 0, 2),
            r(IrqExit, 0, 0, 0, 3),
            r(SchedOut, 1, 0, 0, 4),
            r(IrqEnter, 0, 0, 0, 5),
            r(IrqExit, 0, 0, 0, 6),
            r(SchedIn, 1, 0, 0, 7),
            r(SyscallExit, 1, 0, a, 8),
        ];
        let g = group_by_rid(&stream);
        let kinds: Vec<_> = g.requests[0].events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![SyscallEnter, IrqEnter, IrqExit, SchedOut, SchedIn, SyscallExit]);
        assert_eq!(g.stats.discarded_irqs, 1);
    }

    #[test]
    fn missing_exit_is_incomplete() {
        let g = group_by_rid(&[r(SyscallEnter, 1, 0, 256, 0), r(FuncEntry, 1, 0, 256, 1)]);
        assert!(g.requests.is_empty());
        assert_eq!(g.stats.incomplete, 1);
        assert_eq!(g.incomplete[0].rid, RequestId(256));
    }
}
