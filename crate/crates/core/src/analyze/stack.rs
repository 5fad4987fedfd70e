use crate::config::LayerMap;
use crate::trace::{EventKind, FunctionId, TraceRecord};

use super::{AnalysisError, LayerStat, RequestProfile};

struct Frame {
    func: FunctionId,
    layer: Option<usize>,
    entry: u64,
    child_ns: u64,
    interference_ns: u64,
}

struct Window {
    start: u64,
    offcpu: bool,
    irq_ns: u64,
}

/// Stack-walk attribution of one request's events.
///
/// On each function exit the frame's self time is its gross time minus the
/// gross time of its children and the interference (IRQ and switched-out
/// time) that landed directly in it. A switched-out window opened while a
/// device submission is outstanding counts as io wait, otherwise as
/// scheduler interference; IRQ time inside a window is excluded from it.
/// Hardware counter deltas between consecutive same-cpu events are credited
/// to the innermost frame's layer when the segment is plain on-cpu time.
pub fn compute_request_profile(events: &[TraceRecord], layers: &LayerMap) -> Result<RequestProfile, AnalysisError> {
    let first = events.first().ok_or(AnalysisError::Empty)?;
    let rid = first.rid;
    let bad = |i: usize, msg: &str| AnalysisError::malformed(rid, i, &events[i], msg);
    if first.kind != EventKind::SyscallEnter {
        return Err(bad(0, "request must start with SYSCALL_ENTER"));
    }
    let last_idx = events.len() - 1;
    if last_idx == 0 || events[last_idx].kind != EventKind::SyscallExit {
        return Err(bad(last_idx, "request must end with SYSCALL_EXIT"));
    }

    let mut stats: Vec<LayerStat> = layers
        .names()
        .iter()
        .map(|n| LayerStat { layer: n.clone(), ..Default::default() })
        .collect();
    let mut stack: Vec<Frame> = Vec::new();
    let mut irq_depth = 0u32;
    let mut irq_start = 0u64;
    let mut irq_ns = 0u64;
    let mut irq_count = 0u64;
    let mut sched_ns = 0u64;
    let mut io_wait_ns = 0u64;
    let mut window: Option<Window> = None;
    let mut submits = 0u64;
    let mut completes = 0u64;

    for (i, (prev, ev)) in events.iter().zip(&events[1..]).enumerate() {
        let i = i + 1;
        if ev.ts < prev.ts {
            return Err(bad(i, "timestamp goes backwards"));
        }
        if irq_depth == 0 && window.is_none() && prev.cpu == ev.cpu {
            if let Some(layer) = stack.last().and_then(|f| f.layer) {
                stats[layer].cycles += ev.hw.cycles.saturating_sub(prev.hw.cycles);
                stats[layer].instructions += ev.hw.instructions.saturating_sub(prev.hw.instructions);
            }
        }

        match ev.kind {
            EventKind::FuncEntry | EventKind::FuncExit if irq_depth > 0 || window.is_some() => {
                return Err(bad(i, "function event while interrupted or switched out"));
            }
            EventKind::FuncEntry => stack.push(Frame {
                func: ev.func,
                layer: layers.layer_of(ev.func),
                entry: ev.ts,
                child_ns: 0,
                interference_ns: 0,
            }),
            EventKind::FuncExit => {
                let frame = stack.pop().ok_or_else(|| bad(i, "exit without open frame"))?;
                if frame.func != ev.func {
                    return Err(bad(i, "exit does not match innermost frame"));
                }
                let gross = ev.ts - frame.entry;
                let self_ns = gross
                    .checked_sub(frame.child_ns)
                    .and_then(|r| r.checked_sub(frame.interference_ns))
                    .ok_or(AnalysisError::NegativeSelf { rid, func: ev.func.0, index: i })?;
                // frames outside every layer leave their self time unattributed
                if let Some(l) = frame.layer {
                    stats[l].self_ns += self_ns;
                }
                if let Some(parent) = stack.last_mut() {
                    parent.child_ns += gross;
                }
            }
            EventKind::IrqEnter => {
                if irq_depth == 0 {
                    irq_start = ev.ts;
                }
                irq_depth += 1;
                irq_count += 1;
            }
            EventKind::IrqExit => {
                irq_depth = irq_depth.checked_sub(1).ok_or_else(|| bad(i, "IRQ_EXIT without IRQ_ENTER"))?;
                if irq_depth == 0 {
                    let d = ev.ts - irq_start;
                    irq_ns += d;
                    if let Some(w) = window.as_mut() {
                        w.irq_ns += d;
                    }
                    if let Some(f) = stack.last_mut() {
                        f.interference_ns += d;
                    }
                }
            }
            EventKind::SchedOut => {
                if irq_depth > 0 || window.is_some() {
                    return Err(bad(i, "SCHED_OUT while interrupted or already switched out"));
                }
                window = Some(Window { start: ev.ts, offcpu: submits > completes, irq_ns: 0 });
            }
            EventKind::SchedIn => {
                if irq_depth > 0 {
                    return Err(bad(i, "SCHED_IN while interrupted"));
                }
                let w = window.take().ok_or_else(|| bad(i, "SCHED_IN without SCHED_OUT"))?;
                let span = (ev.ts - w.start)
                    .checked_sub(w.irq_ns)
                    .ok_or_else(|| bad(i, "IRQ time exceeds switched-out window"))?;
                if w.offcpu {
                    io_wait_ns += span;
                } else {
                    sched_ns += span;
                }
                if let Some(f) = stack.last_mut() {
                    f.interference_ns += span;
                }
            }
            EventKind::OffcpuSubmit => submits += 1,
            EventKind::OffcpuComplete => completes += 1,
            EventKind::SyscallEnter => return Err(bad(i, "nested SYSCALL_ENTER")),
            EventKind::SyscallExit if i != last_idx => return Err(bad(i, "SYSCALL_EXIT before end of request")),
            EventKind::SyscallExit => {
                if !stack.is_empty() {
                    return Err(bad(i, "request ends with open frames"));
                }
                if irq_depth > 0 || window.is_some() {
                    return Err(bad(i, "request ends interrupted or switched out"));
                }
            }
        }
    }

    let last = &events[last_idx];
    let total_ns = last.ts - first.ts;
    let unattributed_ns = total_ns
        .checked_sub(stats.iter().map(|l| l.self_ns).sum::<u64>())
        .and_then(|r| r.checked_sub(irq_ns + sched_ns + io_wait_ns))
        .ok_or_else(|| bad(last_idx, "attributed time exceeds request span"))?;

    Ok(RequestProfile {
        rid,
        pid: first.pid,
        tid: first.tid,
        cpu: first.cpu,
        start_ns: first.ts,
        end_ns: last.ts,
        total_ns,
        layers: stats,
        irq_ns,
        irq_count,
        sched_ns,
        io_wait_ns,
        unattributed_ns,
    })
}
