//! Trace record vocabulary shared by the simulator, the transport and the
//! analyzer, plus a stream well-formedness checker.
//!
//! Every probe handler emits one fixed-shape [`TraceRecord`]. Function names
//! are interned into a session-scoped [`StringTable`] so that records stay
//! fixed-size on the wire.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kind of probe point that produced a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum EventKind {
    FuncEntry = 0,
    FuncExit = 1,
    IrqEnter = 2,
    IrqExit = 3,
    SchedOut = 4,
    SchedIn = 5,
    OffcpuSubmit = 6,
    OffcpuComplete = 7,
    SyscallEnter = 8,
    SyscallExit = 9,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::FuncEntry,
        EventKind::FuncExit,
        EventKind::IrqEnter,
        EventKind::IrqExit,
        EventKind::SchedOut,
        EventKind::SchedIn,
        EventKind::OffcpuSubmit,
        EventKind::OffcpuComplete,
        EventKind::SyscallEnter,
        EventKind::SyscallExit,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::FuncEntry => "FUNC_ENTRY",
            EventKind::FuncExit => "FUNC_EXIT",
            EventKind::IrqEnter => "IRQ_ENTER",
            EventKind::IrqExit => "IRQ_EXIT",
            EventKind::SchedOut => "SCHED_OUT",
            EventKind::SchedIn => "SCHED_IN",
            EventKind::OffcpuSubmit => "OFFCPU_SUBMIT",
            EventKind::OffcpuComplete => "OFFCPU_COMPLETE",
            EventKind::SyscallEnter => "SYSCALL_ENTER",
            EventKind::SyscallExit => "SYSCALL_EXIT",
        };
        f.write_str(s)
    }
}

/// Interned function name. Ids are dense and start at 1; 0 is never assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct FunctionId(pub u32);

/// Request id: syscall-entry timestamp shifted left by 8, cpu index in the
/// low 8 bits. Zero means "not attributed yet".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

impl RequestId {
    pub const NONE: RequestId = RequestId(0);

    pub fn compose(entry_ts: u64, cpu: u8) -> Self {
        RequestId((entry_ts << 8) | u64::from(cpu))
    }

    pub fn is_none(self) -> bool {
        self.0 == 0
    }

    pub fn entry_ts(self) -> u64 {
        self.0 >> 8
    }

    pub fn cpu(self) -> u8 {
        (self.0 & 0xff) as u8
    }
}

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// Cumulative per-cpu hardware counters sampled by a probe handler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct HwSample {
    pub cycles: u64,
    pub instructions: u64,
}

/// One probe-handler emission.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceRecord {
    pub kind: EventKind,
    pub func: FunctionId,
    pub pid: u32,
    pub tid: u32,
    pub cpu: u8,
    pub rid: RequestId,
    /// Nanoseconds.
    pub ts: u64,
    pub hw: HwSample,
}

pub const MAX_NAME_LEN: usize = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InternError {
    #[error("function name is empty")]
    Empty,
    #[error("function name is {0} bytes, limit is {MAX_NAME_LEN}")]
    TooLong(usize),
    #[error("function id {id} already bound to {existing:?}, refusing {name:?}")]
    Conflict { id: u32, existing: String, name: String },
    #[error("function id 0 is reserved")]
    ReservedId,
}

/// Session-scoped function name table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StringTable {
    names: BTreeMap<u32, String>,
    ids: HashMap<String, u32>,
}

impl StringTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn check(name: &str) -> Result<(), InternError> {
        if name.is_empty() {
            return Err(InternError::Empty);
        }
        if name.len() > MAX_NAME_LEN {
            return Err(InternError::TooLong(name.len()));
        }
        Ok(())
    }

    /// Returns the id for `name`, assigning the next dense id on first use.
    pub fn intern(&mut self, name: &str) -> Result<FunctionId, InternError> {
        Self::check(name)?;
        if let Some(&id) = self.ids.get(name) {
            return Ok(FunctionId(id));
        }
        let id = self.names.keys().next_back().map_or(1, |last| last + 1);
        self.names.insert(id, name.to_owned());
        self.ids.insert(name.to_owned(), id);
        Ok(FunctionId(id))
    }

    /// Binds an explicit id, as received from a peer's string-table delta.
    /// Re-binding the same pair is a no-op.
    pub fn bind(&mut self, id: FunctionId, name: &str) -> Result<(), InternError> {
        Self::check(name)?;
        if id.0 == 0 {
            return Err(InternError::ReservedId);
        }
        match self.names.get(&id.0) {
            Some(existing) if existing == name => Ok(()),
            Some(existing) => Err(InternError::Conflict {
                id: id.0,
                existing: existing.clone(),
                name: name.to_owned(),
            }),
            None => {
                if let Some(&other) = self.ids.get(name) {
                    return Err(InternError::Conflict {
                        id: other,
                        existing: name.to_owned(),
                        name: name.to_owned(),
                    });
                }
                self.names.insert(id.0, name.to_owned());
                self.ids.insert(name.to_owned(), id.0);
                Ok(())
            }
        }
    }

    pub fn name(&self, id: FunctionId) -> Option<&str> {
        self.names.get(&id.0).map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Option<FunctionId> {
        self.ids.get(name).copied().map(FunctionId)
    }

    pub fn contains(&self, id: FunctionId) -> bool {
        self.names.contains_key(&id.0)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = (FunctionId, &str)> {
        self.names.iter().map(|(&id, n)| (FunctionId(id), n.as_str()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    TimestampRegression,
    HwRegression,
    NonLifoExit,
    UnmatchedExit,
    UnmatchedEntry,
    UnmatchedIrqExit,
    UnmatchedIrqEnter,
    SchedOrder,
    DuplicateSyscall,
    SyscallExitWithoutEnter,
    MissingSyscallExit,
    RecordOutsideSyscall,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, index: usize, code: ViolationCode, message: String) {
        self.errors.push(Violation { index, code, message });
    }
}

#[derive(Default)]
struct CpuCursor {
    ts: u64,
    hw: HwSample,
    seen: bool,
    irq_stack: Vec<(FunctionId, usize)>,
}

struct SyscallSpan {
    enter: Option<(usize, u64)>,
    exit: Option<(usize, u64)>,
}

/// Checks pairing, ordering and counter monotonicity of a record stream.
///
/// Per-cpu checks (timestamps, counters, IRQ nesting) follow the stream
/// order of that cpu; function nesting follows the stream order of each
/// thread. Syscall bracketing is checked by timestamp so the verdict does not
/// depend on how records from different cpus were interleaved.
pub fn validate_stream(records: &[TraceRecord]) -> ValidationReport {
    use EventKind::*;
    use ViolationCode::*;

    let mut report = ValidationReport::default();
    let mut cpus: HashMap<u8, CpuCursor> = HashMap::new();
    let mut frames: HashMap<u32, Vec<(FunctionId, usize, u64)>> = HashMap::new();
    let mut switched_out: HashMap<u32, bool> = HashMap::new();
    let mut spans: HashMap<RequestId, SyscallSpan> = HashMap::new();

    for (i, r) in records.iter().enumerate() {
        let cpu = cpus.entry(r.cpu).or_default();
        if cpu.seen {
            if r.ts < cpu.ts {
                report.push(
                    i,
                    TimestampRegression,
                    format!("cpu {} timestamp {} < previous {}", r.cpu, r.ts, cpu.ts),
                );
            }
            if r.hw.cycles < cpu.hw.cycles || r.hw.instructions < cpu.hw.instructions {
                report.push(
                    i,
                    HwRegression,
                    format!(
                        "cpu {} counters ({}, {}) < previous ({}, {})",
                        r.cpu, r.hw.cycles, r.hw.instructions, cpu.hw.cycles, cpu.hw.instructions
                    ),
                );
            }
        }
        cpu.seen = true;
        cpu.ts = cpu.ts.max(r.ts);
        cpu.hw.cycles = cpu.hw.cycles.max(r.hw.cycles);
        cpu.hw.instructions = cpu.hw.instructions.max(r.hw.instructions);

        match r.kind {
            FuncEntry => frames.entry(r.tid).or_default().push((r.func, i, r.ts)),
            FuncExit => {
                let stack = frames.entry(r.tid).or_default();
                match stack.last() {
                    None => report.push(
                        i,
                        UnmatchedExit,
                        format!("tid {} exits func {} with no open frame", r.tid, r.func.0),
                    ),
                    Some(&(f, _, entry_ts)) if f == r.func => {
                        if r.ts < entry_ts {
                            report.push(
                                i,
                                TimestampRegression,
                                format!("func {} exits at {} before entry {}", f.0, r.ts, entry_ts),
                            );
                        }
                        stack.pop();
                    }
                    Some(&(f, _, _)) => {
                        report.push(
                            i,
                            NonLifoExit,
                            format!(
                                "tid {} exits func {} while func {} is innermost",
                                r.tid, r.func.0, f.0
                            ),
                        );
                        // resynchronise on the matching frame if one is open
                        if let Some(pos) = stack.iter().rposition(|&(g, _, _)| g == r.func) {
                            stack.truncate(pos);
                        }
                    }
                }
            }
            IrqEnter => cpu.irq_stack.push((r.func, i)),
            IrqExit => match cpu.irq_stack.last() {
                Some(&(f, _)) if f == r.func => {
                    cpu.irq_stack.pop();
                }
                Some(&(f, _)) => {
                    report.push(
                        i,
                        NonLifoExit,
                        format!("cpu {} irq exit {} while irq {} is innermost", r.cpu, r.func.0, f.0),
                    );
                    cpu.irq_stack.pop();
                }
                None => report.push(
                    i,
                    UnmatchedIrqExit,
                    format!("cpu {} irq exit with no open irq", r.cpu),
                ),
            },
            SchedOut | SchedIn => {
                let out = switched_out.entry(r.tid).or_insert(false);
                let expect_out = r.kind == SchedOut;
                if *out == expect_out {
                    report.push(
                        i,
                        SchedOrder,
                        format!("tid {} {} while already {}", r.tid, r.kind, if *out { "out" } else { "in" }),
                    );
                }
                *out = expect_out;
            }
            SyscallEnter => {
                let span = spans.entry(r.rid).or_insert(SyscallSpan { enter: None, exit: None });
                if span.enter.is_some() {
                    report.push(i, DuplicateSyscall, format!("rid {} entered twice", r.rid));
                } else {
                    span.enter = Some((i, r.ts));
                }
            }
            SyscallExit => {
                let span = spans.entry(r.rid).or_insert(SyscallSpan { enter: None, exit: None });
                if span.exit.is_some() {
                    report.push(i, DuplicateSyscall, format!("rid {} exited twice", r.rid));
                } else {
                    span.exit = Some((i, r.ts));
                }
            }
            OffcpuSubmit | OffcpuComplete => {}
        }
    }

    for (i, r) in records.iter().enumerate() {
        if r.rid.is_none() || matches!(r.kind, EventKind::SyscallEnter | EventKind::SyscallExit) {
            continue;
        }
        match spans.get(&r.rid) {
            Some(SyscallSpan { enter: Some((_, t0)), exit }) => {
                let late = exit.is_some_and(|(_, t1)| r.ts > t1);
                if r.ts < *t0 || late {
                    report.push(
                        i,
                        RecordOutsideSyscall,
                        format!("{} at {} outside syscall span of rid {}", r.kind, r.ts, r.rid),
                    );
                }
            }
            _ => report.push(
                i,
                RecordOutsideSyscall,
                format!("{} carries rid {} with no SYSCALL_ENTER", r.kind, r.rid),
            ),
        }
    }

    let mut span_list: Vec<_> = spans.iter().collect();
    span_list.sort_by_key(|(rid, _)| **rid);
    for (rid, span) in span_list {
        match (span.enter, span.exit) {
            (Some((i, _)), None) => {
                report.push(i, MissingSyscallExit, format!("rid {rid} has no SYSCALL_EXIT"))
            }
            (None, Some((i, _))) => {
                report.push(i, SyscallExitWithoutEnter, format!("rid {rid} exits without entering"))
            }
            (Some((_, t0)), Some((i, t1))) if t1 < t0 => report.push(
                i,
                TimestampRegression,
                format!("rid {rid} exits at {t1} before entry {t0}"),
            ),
            _ => {}
        }
    }

    let mut leftovers: Vec<(usize, ViolationCode, String)> = Vec::new();
    for (tid, stack) in &frames {
        for &(f, i, _) in stack {
            leftovers.push((i, UnmatchedEntry, format!("tid {tid} never exits func {}", f.0)));
        }
    }
    for (cpu_id, cpu) in &cpus {
        for &(_, i) in &cpu.irq_stack {
            leftovers.push((i, UnmatchedIrqEnter, format!("cpu {cpu_id} irq never exits")));
        }
    }
    leftovers.sort_by_key(|(i, _, _)| *i);
    for (i, code, msg) in leftovers {
        report.push(i, code, msg);
    }

    report.ok = report.errors.is_empty();
    report
}
