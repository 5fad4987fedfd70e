use crate::config::LayerMap;
use crate::trace::{EventKind, TraceRecord};

use super::{AnalysisError, LayerStat, RequestProfile};

/// A bracketed span of the event list, by event index: covers the
/// elementary segments `open..close`.
struct Span {
    open: usize,
    close: usize,
    /// Layer for frames, io-wait flag for switched-out windows.
    layer: Option<usize>,
    offcpu: bool,
}

impl Span {
    fn covers(&self, segment: usize) -> bool {
        self.open <= segment && segment < self.close
    }
}

enum Bucket {
    Irq,
    IoWait,
    Sched,
    Layer(usize),
    Unattributed,
}

/// Reference attribution by brute-force segment sweep.
///
/// The request span is cut at every event; segment `k` lies between events
/// `k` and `k + 1`. Each segment goes to exactly one bucket by priority:
/// inside any IRQ span, then inside a switched-out window (io wait when a
/// submission was outstanding at switch-out, otherwise sched), then the
/// innermost covering frame's layer, else unattributed. Quadratic in the
/// number of events.
pub fn oracle_profile(events: &[TraceRecord], layers: &LayerMap) -> Result<RequestProfile, AnalysisError> {
    let first = events.first().ok_or(AnalysisError::Empty)?;
    let rid = first.rid;
    let bad = |i: usize, msg: &str| AnalysisError::malformed(rid, i, &events[i], msg);
    let n = events.len();
    if first.kind != EventKind::SyscallEnter {
        return Err(bad(0, "request must start with SYSCALL_ENTER"));
    }
    if n < 2 || events[n - 1].kind != EventKind::SyscallExit {
        return Err(bad(n - 1, "request must end with SYSCALL_EXIT"));
    }
    for i in 1..n {
        if events[i].ts < events[i - 1].ts {
            return Err(bad(i, "timestamp goes backwards"));
        }
        match events[i].kind {
            EventKind::SyscallEnter => return Err(bad(i, "nested SYSCALL_ENTER")),
            EventKind::SyscallExit if i != n - 1 => return Err(bad(i, "SYSCALL_EXIT before end of request")),
            _ => {}
        }
    }

    // Pair brackets. Frames and IRQs nest; windows do not.
    let mut frames = Vec::new();
    let mut irqs = Vec::new();
    let mut windows = Vec::new();
    let mut open_frames: Vec<usize> = Vec::new();
    let mut open_irqs: Vec<usize> = Vec::new();
    let mut open_window: Option<usize> = None;
    for (i, ev) in events.iter().enumerate() {
        match ev.kind {
            EventKind::FuncEntry => open_frames.push(i),
            EventKind::FuncExit => {
                let o = open_frames.pop().ok_or_else(|| bad(i, "exit without open frame"))?;
                if events[o].func != ev.func {
                    return Err(bad(i, "exit does not match innermost frame"));
                }
                frames.push(Span { open: o, close: i, layer: layers.layer_of(ev.func), offcpu: false });
            }
            EventKind::IrqEnter => open_irqs.push(i),
            EventKind::IrqExit => {
                let o = open_irqs.pop().ok_or_else(|| bad(i, "IRQ_EXIT without IRQ_ENTER"))?;
                irqs.push(Span { open: o, close: i, layer: None, offcpu: false });
            }
            EventKind::SchedOut => {
                if open_window.replace(i).is_some() {
                    return Err(bad(i, "SCHED_OUT while already switched out"));
                }
            }
            EventKind::SchedIn => {
                let o = open_window.take().ok_or_else(|| bad(i, "SCHED_IN without SCHED_OUT"))?;
                let count = |k: EventKind| events[..o].iter().filter(|e| e.kind == k).count();
                let offcpu = count(EventKind::OffcpuSubmit) > count(EventKind::OffcpuComplete);
                windows.push(Span { open: o, close: i, layer: None, offcpu });
            }
            _ => {}
        }
    }
    if !open_frames.is_empty() || !open_irqs.is_empty() || open_window.is_some() {
        return Err(bad(n - 1, "request ends with open brackets"));
    }

    // Structural rules: nothing but IRQs and completions inside an IRQ, no
    // function events inside a window, windows never start or end inside
    // an IRQ.
    for (i, ev) in events.iter().enumerate() {
        let in_irq = irqs.iter().any(|s| s.open < i && i < s.close);
        let in_window = windows.iter().any(|s| s.open < i && i < s.close);
        let is_func = matches!(ev.kind, EventKind::FuncEntry | EventKind::FuncExit);
        let is_sched = matches!(ev.kind, EventKind::SchedOut | EventKind::SchedIn);
        if (is_func || is_sched) && in_irq {
            return Err(bad(i, "function or scheduler event inside an IRQ"));
        }
        if is_func && in_window {
            return Err(bad(i, "function event while switched out"));
        }
    }

    let mut stats: Vec<LayerStat> = layers
        .names()
        .iter()
        .map(|name| LayerStat { layer: name.clone(), ..Default::default() })
        .collect();
    let mut irq_ns = 0;
    let mut sched_ns = 0;
    let mut io_wait_ns = 0;
    let mut unattributed_ns = 0;

    for k in 0..n - 1 {
        let (a, b) = (&events[k], &events[k + 1]);
        let len = b.ts - a.ts;
        let bucket = if irqs.iter().any(|s| s.covers(k)) {
            Bucket::Irq
        } else if let Some(w) = windows.iter().find(|s| s.covers(k)) {
            if w.offcpu {
                Bucket::IoWait
            } else {
                Bucket::Sched
            }
        } else {
            match frames.iter().filter(|s| s.covers(k)).max_by_key(|s| s.open) {
                Some(Span { layer: Some(l), .. }) => Bucket::Layer(*l),
                _ => Bucket::Unattributed,
            }
        };
        match bucket {
            Bucket::Irq => irq_ns += len,
            Bucket::IoWait => io_wait_ns += len,
            Bucket::Sched => sched_ns += len,
            Bucket::Unattributed => unattributed_ns += len,
            Bucket::Layer(l) => {
                stats[l].self_ns += len;
                if a.cpu == b.cpu {
                    stats[l].cycles += b.hw.cycles.saturating_sub(a.hw.cycles);
                    stats[l].instructions += b.hw.instructions.saturating_sub(a.hw.instructions);
                }
            }
        }
    }

    let last = &events[n - 1];
    Ok(RequestProfile {
        rid,
        pid: first.pid,
        tid: first.tid,
        cpu: first.cpu,
        start_ns: first.ts,
        end_ns: last.ts,
        total_ns: last.ts - first.ts,
        layers: stats,
        irq_ns,
        irq_count: events.iter().filter(|e| e.kind == EventKind::IrqEnter).count() as u64,
        sched_ns,
        io_wait_ns,
        unattributed_ns,
    })
}

/// Number of elementary segments the sweep visits.
pub fn segment_count(events: &[TraceRecord]) -> usize {
    events.len().saturating_sub(1)
}
