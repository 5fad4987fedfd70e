//! Generators of synthetic inputs shared by tests, acceptance checks and
//! benchmarks.

use std::collections::HashMap;

use crate::config::{parse_layer_description, LayerMap};
use crate::rng::SplitMix64;
use crate::trace::{EventKind, FunctionId, HwSample, RequestId, StringTable, TraceRecord};

/// Functions used by [`random_request`]; the last one has no layer.
pub const FUNCTIONS: [&str; 6] = ["vfs_read", "filemap_read", "ext4_file_read_iter", "submit_bio", "io_schedule", "helper"];

/// Layer map matching [`FUNCTIONS`] (ids 1..=6).
pub fn layer_map() -> (LayerMap, StringTable) {
    let ld = parse_layer_description(
        "layer vfs = vfs_read\nlayer mm = filemap_read\nlayer fs = ext4_file_read_iter\nlayer blk = submit_bio\nlayer io = io_schedule",
    )
    .expect("fixture layers parse");
    let mut t = StringTable::new();
    for f in FUNCTIONS {
        t.intern(f).expect("fixture names are valid");
    }
    t.intern("sys_read").unwrap();
    t.intern("irq_handler").unwrap();
    t.intern("sched_switch").unwrap();
    t.intern("block_rq").unwrap();
    (ld.resolve(&t), t)
}

const SYSCALL: FunctionId = FunctionId(7);
const IRQ: FunctionId = FunctionId(8);
const SCHED: FunctionId = FunctionId(9);
const BLOCK: FunctionId = FunctionId(10);

struct Gen {
    rng: SplitMix64,
    rid: RequestId,
    ts: u64,
    cpu: u8,
    counters: HashMap<u8, HwSample>,
    out: Vec<TraceRecord>,
}

impl Gen {
    fn push(&mut self, kind: EventKind, func: FunctionId, attributed: bool) {
        self.ts += if self.rng.chance(0.15) { 0 } else { self.rng.range(1, 60) };
        let hw = self.counters.entry(self.cpu).or_default();
        hw.cycles += self.rng.range(0, 150);
        hw.instructions += self.rng.range(0, 100);
        let hw = *hw;
        self.out.push(TraceRecord {
            kind,
            func,
            pid: 100,
            tid: 101,
            cpu: self.cpu,
            rid: if attributed { self.rid } else { RequestId::NONE },
            ts: self.ts,
            hw,
        });
    }
}

/// A random well-formed request of at most `max_events` events (at least
/// 2): nested frames, IRQs (possibly nested, possibly inside off-cpu
/// windows), device submissions and completions, and switched-out windows
/// after which the thread may resume on another cpu.
pub fn random_request(seed: u64, max_events: usize) -> Vec<TraceRecord> {
    let max_events = max_events.max(2);
    let mut rng = SplitMix64::new(seed);
    let start = rng.range(1, 1 << 30);
    let cpu = rng.below(4) as u8;
    let mut g = Gen { rng, rid: RequestId::compose(start, cpu), ts: start, cpu, counters: HashMap::new(), out: Vec::new() };
    let target = g.rng.range(2, max_events as u64) as usize;
    g.push(EventKind::SyscallEnter, SYSCALL, true);
    g.ts = start;
    g.out[0].ts = start;

    let mut frames: Vec<FunctionId> = Vec::new();
    let mut irqs = 0usize;
    let mut window = false;

    loop {
        // events still needed to close everything, plus SYSCALL_EXIT
        let reserve = frames.len() + irqs + usize::from(window) + 1;
        let room = target - g.out.len();
        if room <= reserve {
            break;
        }
        let spare = room - reserve;
        let mut choices: Vec<u8> = Vec::new();
        if irqs == 0 && !window && spare >= 2 {
            choices.extend([0, 0, 0]); // open a frame
        }
        if irqs == 0 && !window && !frames.is_empty() {
            choices.extend([1, 1]); // close a frame
        }
        if irqs < 2 && spare >= 2 {
            choices.push(2); // irq enter
        }
        if irqs > 0 {
            choices.extend([3, 3]); // irq exit
        }
        if irqs == 0 && !window {
            choices.push(4); // submit
            if spare >= 2 {
                choices.push(6); // switch out
            }
        }
        choices.push(5); // complete
        if window && irqs == 0 {
            choices.extend([7, 7]); // switch in
        }
        match choices[g.rng.below(choices.len() as u64) as usize] {
            0 => {
                let f = FunctionId(1 + g.rng.below(FUNCTIONS.len() as u64) as u32);
                frames.push(f);
                g.push(EventKind::FuncEntry, f, true);
            }
            1 => {
                let f = frames.pop().unwrap();
                g.push(EventKind::FuncExit, f, true);
            }
            2 => {
                irqs += 1;
                g.push(EventKind::IrqEnter, IRQ, false);
            }
            3 => {
                irqs -= 1;
                g.push(EventKind::IrqExit, IRQ, false);
            }
            4 => g.push(EventKind::OffcpuSubmit, BLOCK, true),
            5 => g.push(EventKind::OffcpuComplete, BLOCK, true),
            6 => {
                window = true;
                g.push(EventKind::SchedOut, SCHED, false);
            }
            _ => {
                window = false;
                if g.rng.chance(0.3) {
                    g.cpu = g.rng.below(4) as u8;
                }
                g.push(EventKind::SchedIn, SCHED, false);
            }
        }
    }
    for _ in 0..irqs {
        g.push(EventKind::IrqExit, IRQ, false);
    }
    if window {
        g.push(EventKind::SchedIn, SCHED, false);
    }
    while let Some(f) = frames.pop() {
        g.push(EventKind::FuncExit, f, true);
    }
    g.push(EventKind::SyscallExit, SYSCALL, true);
    g.out
}
