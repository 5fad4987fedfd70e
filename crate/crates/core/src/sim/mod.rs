//! Deterministic simulator of the kernel read path.
//!
//! Each simulated thread is pinned to its own cpu and issues back-to-back
//! `read` syscalls. Every request's timeline is generated in full (all 15
//! functions), then FUNC records of functions outside the configured probe
//! depth are dropped, so lowering the depth never changes timing. The
//! simulator also records the exact attribution it generated as
//! [`GroundTruth`].
//!
//! Hardware counters: `cycles = ts * 21 / 10` on every cpu; instructions
//! accumulate at the CPI of whatever is running (idle time adds none).

mod path;
mod scenario;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{default_layers, default_profile, probes_at_depth, LayerMap, ProbeDepth, IRQ_BUCKET};
use crate::rng::SplitMix64;
use crate::trace::{EventKind, FunctionId, HwSample, RequestId, StringTable, TraceRecord};

pub use path::LAYERS;
pub use scenario::{
    preset, AccessPattern, CacheModel, DeviceModel, IrqBurst, IrqModel, LayerLatency, NsRange, ScenarioConfig,
    ScenarioError, SchedModel, SlowdownModel, SpikeInjection, PRESETS, SKEW_IRQ_COUNTS, SKEW_IRQ_NS,
};

use path::Step;

pub const PID: u32 = 4242;
pub const FIRST_TID: u32 = 4243;
const START_NS: u64 = 1_000_000;
const IRQ_CPI_MILLI: u64 = 1500;
const OTHER_TASK_CPI_MILLI: u64 = 1000;
const USER_CPI_MILLI: u64 = 1000;

pub fn cycles_at(ts: u64) -> u64 {
    ts * 21 / 10
}

/// What the simulator actually generated for one request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRequest {
    pub rid: RequestId,
    pub thread: usize,
    pub tid: u32,
    pub index: usize,
    pub start_ns: u64,
    pub total_ns: u64,
    /// Self time per layer, in [`LAYERS`] order.
    pub layers: Vec<u64>,
    pub irq_ns: u64,
    pub irq_count: u64,
    pub sched_ns: u64,
    pub io_wait_ns: u64,
    pub miss: bool,
    /// Layer (or `irq`) of an injected spike.
    pub spike: Option<String>,
    pub slowdown: bool,
    pub device_tail: bool,
}

impl TruthRequest {
    pub fn layer_ns(&self, name: &str) -> Option<u64> {
        LAYERS.iter().position(|l| *l == name).map(|i| self.layers[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub seed: u64,
    pub depth: ProbeDepth,
    pub layers: Vec<String>,
    /// In (thread, index) order.
    pub requests: Vec<TruthRequest>,
    /// Device completion interrupts; they land on idle cpus and are not
    /// charged to any request.
    pub completion_irqs: u64,
}

impl GroundTruth {
    /// (count, ns) of interference IRQs per thread.
    pub fn irq_by_thread(&self, threads: usize) -> Vec<(u64, u64)> {
        let mut out = vec![(0, 0); threads];
        for r in &self.requests {
            out[r.thread].0 += r.irq_count;
            out[r.thread].1 += r.irq_ns;
        }
        out
    }

    /// Linear scan; index `requests` for bulk lookups.
    pub fn get(&self, rid: RequestId) -> Option<&TruthRequest> {
        self.requests.iter().find(|r| r.rid == rid)
    }
}

pub struct Simulation {
    pub records: Vec<TraceRecord>,
    pub strings: StringTable,
    pub truth: GroundTruth,
}

impl Simulation {
    pub fn layer_map(&self) -> LayerMap {
        default_layers().resolve(&self.strings)
    }
}

struct Names {
    funcs: Vec<(&'static str, FunctionId)>,
    probed: HashSet<&'static str>,
    syscall: FunctionId,
    irq: FunctionId,
    sched: FunctionId,
    submit: FunctionId,
    complete: FunctionId,
}

impl Names {
    fn func(&self, name: &str) -> FunctionId {
        self.funcs.iter().find(|(n, _)| *n == name).expect("function in call tree").1
    }
}

fn intern_names(depth: ProbeDepth) -> (StringTable, Names) {
    let mut st = StringTable::new();
    let profile = default_profile();
    let mut intern = |n: &str| st.intern(n).expect("built-in names are valid");
    let mut funcs = Vec::new();
    for p in &profile.probes {
        let f = path::all_functions().into_iter().find(|f| *f == p.function).expect("probe in call tree");
        funcs.push((f, intern(f)));
    }
    let syscall = intern(path::SYSCALL_NAME);
    let irq = intern(path::IRQ_HANDLER_NAME);
    let sched = intern(path::SCHED_NAME);
    let submit = intern(path::SUBMIT_NAME);
    let complete = intern(path::COMPLETE_NAME);
    let probed = probes_at_depth(&profile, depth)
        .probes
        .iter()
        .filter_map(|p| funcs.iter().find(|(f, _)| *f == p.function).map(|(f, _)| *f))
        .collect();
    (st, Names { funcs, probed, syscall, irq, sched, submit, complete })
}

/// Splits `total` by largest remainder; ties go to the lower index.
pub fn apportion(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Interference IRQ durations per (thread-local) request, sorted by request.
fn place_irqs(cfg: &ScenarioConfig, quota: u64, thread: usize, rng: &mut SplitMix64) -> Vec<(usize, u64)> {
    let range = cfg.irq.duration[if cfg.irq.duration.len() == 1 { 0 } else { thread }];
    let n = cfg.requests_per_thread as u64;
    let mut out = Vec::with_capacity(quota as usize);
    let mut spread = quota;
    if let Some(b) = &cfg.irq.burst {
        let mut clustered = (b.fraction * quota as f64).floor() as u64;
        spread -= clustered;
        while clustered > 0 {
            let storm = rng.range(b.storm_min, b.storm_max).min(clustered);
            let req = rng.range(b.first_request as u64, b.last_request as u64 - 1) as usize;
            for _ in 0..storm {
                out.push((req, rng.range(range.lo, range.hi)));
            }
            clustered -= storm;
        }
    }
    for _ in 0..spread {
        let req = rng.below(n) as usize;
        out.push((req, rng.range(range.lo, range.hi)));
    }
    out.sort_by_key(|&(r, _)| r);
    out
}

enum Interrupt {
    Irq(u64),
    Preempt(u64),
}

struct Emitter<'a> {
    names: &'a Names,
    cpu: u8,
    tid: u32,
    now: u64,
    instructions: u64,
    out: Vec<TraceRecord>,
}

impl Emitter<'_> {
    fn advance(&mut self, dt: u64, cpi_milli: u64) {
        let c0 = cycles_at(self.now);
        self.now += dt;
        // cpi 0 means idle: cycles pass, nothing retires
        if let Some(instr) = ((cycles_at(self.now) - c0) * 1000).checked_div(cpi_milli) {
            self.instructions += instr;
        }
    }

    fn emit(&mut self, kind: EventKind, func: FunctionId, rid: RequestId, tid: u32) {
        let pid = if tid == 0 { 0 } else { PID };
        self.out.push(TraceRecord {
            kind,
            func,
            pid,
            tid,
            cpu: self.cpu,
            rid,
            ts: self.now,
            hw: HwSample { cycles: cycles_at(self.now), instructions: self.instructions },
        });
    }

    fn interrupt(&mut self, what: &Interrupt) {
        match *what {
            Interrupt::Irq(d) => {
                self.emit(EventKind::IrqEnter, self.names.irq, RequestId::NONE, 0);
                self.advance(d, IRQ_CPI_MILLI);
                self.emit(EventKind::IrqExit, self.names.irq, RequestId::NONE, 0);
            }
            Interrupt::Preempt(d) => {
                self.emit(EventKind::SchedOut, self.names.sched, RequestId::NONE, self.tid);
                self.advance(d, OTHER_TASK_CPI_MILLI);
                self.emit(EventKind::SchedIn, self.names.sched, RequestId::NONE, self.tid);
            }
        }
    }
}

/// Device timing for one miss: (service incl. tail, completion irq, wakeup).
struct DeviceDraw {
    service: u64,
    irq: u64,
    wake: u64,
}

fn draw_range(rng: &mut SplitMix64, r: NsRange) -> u64 {
    rng.range(r.lo, r.hi)
}

fn simulate_thread(
    cfg: &ScenarioConfig,
    names: &Names,
    thread: usize,
    irqs: Vec<(usize, u64)>,
    mut rng: SplitMix64,
) -> (Vec<TraceRecord>, Vec<TruthRequest>) {
    let cpu = thread as u8;
    let tid = FIRST_TID + thread as u32;
    let mut em = Emitter {
        names,
        cpu,
        tid,
        now: START_NS + thread as u64 * 333,
        instructions: 0,
        out: Vec::new(),
    };
    em.instructions = cycles_at(em.now) * 1000 / USER_CPI_MILLI;
    let base: Vec<Option<&LayerLatency>> = LAYERS.iter().map(|l| cfg.layer_latency(l)).collect();
    let mut truth = Vec::with_capacity(cfg.requests_per_thread);
    let mut irq_cursor = 0;
    let mut last_entry = None;

    for index in 0..cfg.requests_per_thread {
        em.advance(draw_range(&mut rng, cfg.think), USER_CPI_MILLI);
        if last_entry == Some(em.now) {
            em.advance(1, USER_CPI_MILLI);
        }
        last_entry = Some(em.now);

        // Per-request draws, in a fixed order.
        let miss = rng.chance(cfg.cache.miss_probability);
        let mut layer_ns = [0u64; LAYERS.len()];
        for (l, b) in base.iter().enumerate() {
            if let Some(b) = b {
                let j = rng.range(0, 2 * b.jitter_ns);
                layer_ns[l] = (b.mean_ns + j).saturating_sub(b.jitter_ns);
            }
        }
        let noise = rng.range(0, 2 * cfg.cpi_noise_milli) as i64 - cfg.cpi_noise_milli as i64;
        let mut cpi: Vec<u64> =
            base.iter().map(|b| (b.map_or(1000, |b| b.cpi_milli) as i64 + noise) as u64).collect();
        let slowdown = cfg.slowdown.as_ref().is_some_and(|s| rng.chance(s.probability));
        if slowdown {
            let pct = cfg.slowdown.as_ref().map_or(100, |s| s.factor_pct);
            for (l, ns) in layer_ns.iter_mut().enumerate() {
                if LAYERS[l] != "io" {
                    *ns = *ns * pct / 100;
                }
            }
        }
        let mut spike = None;
        let mut spike_irq = None;
        for s in cfg.spikes.iter().filter(|s| s.thread == thread && s.request == index) {
            let target = if s.layer == IRQ_BUCKET { "mm" } else { s.layer.as_str() };
            let l = LAYERS.iter().position(|x| *x == target).expect("validated layer");
            if s.layer == IRQ_BUCKET {
                spike_irq = Some(s.added_ns);
            } else {
                layer_ns[l] += s.added_ns;
            }
            cpi[l] = cpi[l] * cfg.spike_cpi_pct / 100;
            spike = Some(s.layer.clone());
        }
        let device_tail = miss && rng.chance(cfg.device.tail_probability);
        let device = DeviceDraw {
            service: draw_range(&mut rng, cfg.device.service)
                + if device_tail { draw_range(&mut rng, cfg.device.tail_extra) } else { 0 },
            irq: draw_range(&mut rng, cfg.device.completion_irq),
            wake: draw_range(&mut rng, cfg.device.wakeup),
        };
        let preempt = if rng.chance(cfg.sched.rate) { Some(draw_range(&mut rng, cfg.sched.duration)) } else { None };

        let steps = path::expand(miss, &layer_ns);

        // On-cpu offsets of the submission and of the sleep.
        let mut oncpu = 0u64;
        let mut submit_at = None;
        let mut sleep_at = None;
        let mut mm_work = None;
        for s in &steps {
            match *s {
                Step::Work { ns, layer } => {
                    if layer == 1 && ns > 0 && mm_work.is_none() {
                        mm_work = Some((oncpu, ns));
                    }
                    oncpu += ns;
                }
                Step::Submit => submit_at = Some(oncpu),
                Step::Sleep => sleep_at = Some(oncpu),
                _ => {}
            }
        }

        let mut interrupts: Vec<(u64, Interrupt)> = Vec::new();
        while irq_cursor < irqs.len() && irqs[irq_cursor].0 == index {
            if oncpu > 0 {
                interrupts.push((rng.below(oncpu), Interrupt::Irq(irqs[irq_cursor].1)));
            }
            irq_cursor += 1;
        }
        if let Some(d) = spike_irq {
            let at = match mm_work {
                Some((start, ns)) => start + rng.below(ns),
                None if oncpu > 0 => rng.below(oncpu),
                None => 0,
            };
            if oncpu > 0 {
                interrupts.push((at, Interrupt::Irq(d)));
            }
        }
        if let Some(d) = preempt {
            // A preemption between submission and sleep would look like a
            // device wait, so it never lands there.
            let (a, b) = match (submit_at, sleep_at) {
                (Some(a), Some(b)) => (a, b),
                _ => (oncpu, oncpu),
            };
            let eligible = a + (oncpu - b);
            if eligible > 0 {
                let r = rng.below(eligible);
                interrupts.push((if r < a { r } else { b + (r - a) }, Interrupt::Preempt(d)));
            }
        }
        interrupts.sort_by_key(|(at, _)| *at);

        let start = em.now;
        let rid = RequestId::compose(start, cpu);
        let mut t = TruthRequest {
            rid,
            thread,
            tid,
            index,
            start_ns: start,
            total_ns: 0,
            layers: vec![0; LAYERS.len()],
            irq_ns: 0,
            irq_count: 0,
            sched_ns: 0,
            io_wait_ns: 0,
            miss,
            spike,
            slowdown,
            device_tail,
        };
        for (_, i) in &interrupts {
            match i {
                Interrupt::Irq(d) => {
                    t.irq_ns += d;
                    t.irq_count += 1;
                }
                Interrupt::Preempt(d) => t.sched_ns += d,
            }
        }

        em.emit(EventKind::SyscallEnter, names.syscall, rid, tid);
        let mut consumed = 0u64;
        let mut next = 0;
        for s in &steps {
            match *s {
                Step::Enter(f) | Step::Exit(f) if names.probed.contains(f) => {
                    let kind = if matches!(s, Step::Enter(_)) { EventKind::FuncEntry } else { EventKind::FuncExit };
                    em.emit(kind, names.func(f), rid, tid);
                }
                Step::Enter(_) | Step::Exit(_) => {}
                Step::Work { ns, layer } => {
                    t.layers[layer] += ns;
                    let end = consumed + ns;
                    while next < interrupts.len() && interrupts[next].0 < end {
                        let at = interrupts[next].0;
                        em.advance(at - consumed, cpi[layer]);
                        consumed = at;
                        em.interrupt(&interrupts[next].1);
                        next += 1;
                    }
                    em.advance(end - consumed, cpi[layer]);
                    consumed = end;
                }
                Step::Submit => em.emit(EventKind::OffcpuSubmit, names.submit, rid, tid),
                Step::Sleep => {
                    let out_at = em.now;
                    em.emit(EventKind::SchedOut, names.sched, RequestId::NONE, tid);
                    em.advance(device.service, 0);
                    em.emit(EventKind::IrqEnter, names.irq, RequestId::NONE, 0);
                    em.advance(device.irq / 2, IRQ_CPI_MILLI);
                    em.emit(EventKind::OffcpuComplete, names.complete, rid, tid);
                    em.advance(device.irq - device.irq / 2, IRQ_CPI_MILLI);
                    em.emit(EventKind::IrqExit, names.irq, RequestId::NONE, 0);
                    em.advance(device.wake, 0);
                    em.emit(EventKind::SchedIn, names.sched, RequestId::NONE, tid);
                    t.io_wait_ns += em.now - out_at;
                }
            }
        }
        em.emit(EventKind::SyscallExit, names.syscall, rid, tid);
        t.total_ns = em.now - start;
        truth.push(t);
    }
    (em.out, truth)
}

/// Runs a scenario. The configuration is validated before anything is
/// generated; identical configurations give identical output.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Simulation, ScenarioError> {
    cfg.validate()?;
    let (strings, names) = intern_names(cfg.depth);
    let mut master = SplitMix64::new(cfg.seed);
    let mut irq_rng = master.fork(0x1);
    let total_irqs = (cfg.irq.rate * cfg.total_requests() as f64).round() as u64;
    let quotas = apportion(total_irqs, &cfg.irq.steering);
    let placements: Vec<Vec<(usize, u64)>> =
        quotas.iter().enumerate().map(|(i, &q)| place_irqs(cfg, q, i, &mut irq_rng)).collect();
    let thread_rngs: Vec<SplitMix64> = (0..cfg.threads).map(|i| master.fork(0x100 + i as u64)).collect();

    let per_thread: Vec<(Vec<TraceRecord>, Vec<TruthRequest>)> = placements
        .into_par_iter()
        .zip(thread_rngs)
        .enumerate()
        .map(|(i, (irqs, rng))| simulate_thread(cfg, &names, i, irqs, rng))
        .collect();

    let mut records = Vec::with_capacity(per_thread.iter().map(|(r, _)| r.len()).sum());
    let mut requests = Vec::with_capacity(cfg.total_requests());
    for (r, t) in per_thread {
        records.extend(r);
        requests.extend(t);
    }
    // Stable: each cpu's own order is kept.
    records.sort_by_key(|r| (r.ts, r.cpu));
    let completion_irqs = requests.iter().filter(|r| r.miss).count() as u64;

    Ok(Simulation {
        records,
        strings,
        truth: GroundTruth {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            depth: cfg.depth,
            layers: LAYERS.iter().map(|s| s.to_string()).collect(),
            requests,
            completion_irqs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::analyze;
    use crate::trace::validate_stream;

    fn small(name: &str, requests: usize) -> ScenarioConfig {
        let mut cfg = preset(name).unwrap();
        cfg.requests_per_thread = requests;
        cfg.spikes.retain(|s| s.request < requests);
        if let Some(b) = cfg.irq.burst.as_mut() {
            b.first_request = requests / 4;
            b.last_request = requests / 2;
        }
        cfg
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(10_478, &[7276.0, 128.0, 2953.0, 121.0]), vec![7276, 128, 2953, 121]);
        assert_eq!(apportion(0, &[1.0]), vec![0]);
        assert_eq!(apportion(5, &[0.0, 2.0]), vec![0, 5]);
    }

    #[test]
    fn single_request_degenerate_case() {
        let sim = simulate(&ScenarioConfig::single_request(100, ProbeDepth::MIN)).unwrap();
        assert_eq!(sim.records.len(), 6);
        assert_eq!(sim.truth.requests[0].total_ns, 100);
        let kinds: Vec<_> = sim.records.iter().map(|r| r.kind).collect();
        use EventKind::*;
        assert_eq!(kinds, vec![SyscallEnter, FuncEntry, FuncEntry, FuncExit, FuncExit, SyscallExit]);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = small("mt_irq_skew", 200);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.truth, b.truth);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(simulate(&other).unwrap().records, a.records);
    }

    #[test]
    fn streams_are_well_formed_and_match_truth() {
        for name in PRESETS {
            let sim = simulate(&small(name, 300)).unwrap();
            let report = validate_stream(&sim.records);
            assert!(report.ok, "{name}: {:?}", &report.errors[..report.errors.len().min(3)]);
            let analysis = analyze(&sim.records, &sim.layer_map());
            assert!(analysis.incomplete.is_empty(), "{name}");
            assert_eq!(analysis.profiles.len(), sim.truth.requests.len());
            for p in &analysis.profiles {
                let t = sim.truth.get(p.rid).unwrap();
                assert_eq!(p.total_ns, t.total_ns);
                assert_eq!(p.irq_ns, t.irq_ns, "{name} {}", p.rid);
                assert_eq!(p.irq_count, t.irq_count);
                assert_eq!(p.sched_ns, t.sched_ns);
                assert_eq!(p.io_wait_ns, t.io_wait_ns);
                assert_eq!(p.unattributed_ns, 0);
                let layers: Vec<u64> = p.layers.iter().map(|l| l.self_ns).collect();
                assert_eq!(layers, t.layers);
            }
        }
    }

    #[test]
    fn lower_depth_only_drops_function_records() {
        let mut cfg = small("randread_miss", 100);
        let full = simulate(&cfg).unwrap();
        cfg.depth = ProbeDepth::new(3).unwrap();
        let shallow = simulate(&cfg).unwrap();
        let kept: Vec<_> = full
            .records
            .iter()
            .filter(|r| {
                !matches!(r.kind, EventKind::FuncEntry | EventKind::FuncExit)
                    || shallow.records.iter().any(|s| s.func == r.func)
            })
            .copied()
            .collect();
        assert_eq!(kept, shallow.records);
        assert_eq!(full.truth.requests, shallow.truth.requests);
    }

    #[test]
    fn invalid_config_is_rejected_before_emission() {
        let mut cfg = preset("seqread_hit").unwrap();
        cfg.threads = 0;
        assert!(matches!(simulate(&cfg), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn completion_irqs_are_not_charged() {
        let mut cfg = small("randread_miss", 200);
        cfg.irq.rate = 0.0;
        let sim = simulate(&cfg).unwrap();
        assert!(sim.truth.completion_irqs > 150);
        let analysis = analyze(&sim.records, &sim.layer_map());
        assert!(analysis.profiles.iter().all(|p| p.irq_count == 0));
        assert_eq!(analysis.stats.discarded_irqs, sim.truth.completion_irqs);
    }
}
