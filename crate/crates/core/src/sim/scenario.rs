use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ProbeDepth, IRQ_BUCKET};

use super::path::LAYERS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown preset {0:?} (expected seqread_hit, randread_miss or mt_irq_skew)")]
    UnknownPreset(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Inclusive uniform range in nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsRange {
    pub lo: u64,
    pub hi: u64,
}

impl NsRange {
    pub const ZERO: NsRange = NsRange { lo: 0, hi: 0 };

    pub const fn new(lo: u64, hi: u64) -> Self {
        NsRange { lo, hi }
    }

    /// Symmetric range around `mean`.
    pub const fn around(mean: u64, jitter: u64) -> Self {
        NsRange { lo: mean.saturating_sub(jitter), hi: mean + jitter }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessPattern {
    Sequential,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerLatency {
    pub layer: String,
    pub mean_ns: u64,
    pub jitter_ns: u64,
    /// Baseline cycles per instruction, in thousandths.
    pub cpi_milli: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheModel {
    pub miss_probability: f64,
}

/// Extra latency added to one layer of one request. The layer `irq` injects
/// a single interrupt of `added_ns` into the request's mm-layer work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeInjection {
    pub thread: usize,
    pub request: usize,
    pub layer: String,
    pub added_ns: u64,
}

/// Interrupts clustered into a band of each thread's requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrqBurst {
    /// Thread-local request indices `[first, last)`.
    pub first_request: usize,
    pub last_request: usize,
    /// Share of each thread's interrupts that land inside the band.
    pub fraction: f64,
    /// Interrupts per storm; every storm hits a single request.
    pub storm_min: u64,
    pub storm_max: u64,
}

/// Interrupts that land on traced cpus and steal time from running requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrqModel {
    /// Expected interrupts per request over the whole run.
    pub rate: f64,
    /// One range shared by all threads, or one per thread.
    pub duration: Vec<NsRange>,
    /// Per-thread steering weights; the interrupt total is apportioned
    /// exactly by largest remainder.
    pub steering: Vec<f64>,
    pub burst: Option<IrqBurst>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedModel {
    /// Probability that a request is preempted once.
    pub rate: f64,
    pub duration: NsRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub service: NsRange,
    pub tail_probability: f64,
    pub tail_extra: NsRange,
    /// Completion interrupt handled on the requester's (idle) cpu.
    pub completion_irq: NsRange,
    pub wakeup: NsRange,
}

/// With `probability`, every non-wait layer of a request is scaled by
/// `factor_pct` percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowdownModel {
    pub probability: f64,
    pub factor_pct: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub threads: usize,
    pub requests_per_thread: usize,
    pub pattern: AccessPattern,
    pub cache: CacheModel,
    pub layers: Vec<LayerLatency>,
    pub spikes: Vec<SpikeInjection>,
    pub irq: IrqModel,
    pub sched: SchedModel,
    pub device: DeviceModel,
    pub slowdown: Option<SlowdownModel>,
    /// User-space time between consecutive requests of a thread.
    pub think: NsRange,
    /// Per-request CPI noise, thousandths, applied to every layer alike.
    pub cpi_noise_milli: u64,
    /// CPI of a spiked layer, as a percentage of its baseline.
    pub spike_cpi_pct: u64,
    pub depth: ProbeDepth,
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["seqread_hit", "randread_miss", "mt_irq_skew"];

/// Per-thread IRQ counts and handling time the `mt_irq_skew` preset is
/// calibrated against.
pub const SKEW_IRQ_COUNTS: [u64; 4] = [7276, 128, 2953, 121];
pub const SKEW_IRQ_NS: [u64; 4] = [47_849_914, 816_828, 19_398_496, 787_582];

fn layer(name: &str, mean_ns: u64, jitter_ns: u64, cpi_milli: u64) -> LayerLatency {
    LayerLatency { layer: name.to_owned(), mean_ns, jitter_ns, cpi_milli }
}

fn miss_path_layers() -> Vec<LayerLatency> {
    vec![
        layer("vfs", 1500, 150, 1100),
        layer("mm", 2500, 250, 1200),
        layer("fs", 1800, 200, 1150),
        layer("blk", 900, 100, 1300),
        layer("req", 1600, 200, 1350),
        layer("drv", 2200, 250, 1400),
        layer("cpy", 3000, 300, 1250),
        layer("io", 400, 50, 1100),
    ]
}

fn default_device() -> DeviceModel {
    DeviceModel {
        service: NsRange::new(80_000, 100_000),
        tail_probability: 0.0,
        tail_extra: NsRange::ZERO,
        completion_irq: NsRange::new(1_500, 2_500),
        wakeup: NsRange::new(800, 1_500),
    }
}

fn no_irqs(threads: usize) -> IrqModel {
    IrqModel { rate: 0.0, duration: vec![NsRange::ZERO], steering: vec![1.0; threads], burst: None }
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg = match name {
        // Single-threaded sequential reads served from the page cache:
        // ~18 us per request across vfs/mm/cpy, with five injected spikes.
        "seqread_hit" => ScenarioConfig {
            name: name.into(),
            threads: 1,
            requests_per_thread: 1000,
            pattern: AccessPattern::Sequential,
            cache: CacheModel { miss_probability: 0.0 },
            layers: vec![
                layer("vfs", 6000, 300, 1150),
                layer("mm", 5000, 300, 1200),
                layer("fs", 0, 0, 1100),
                layer("cpy", 7000, 300, 1250),
            ],
            spikes: vec![
                SpikeInjection { thread: 0, request: 120, layer: "vfs".into(), added_ns: 9_000 },
                SpikeInjection { thread: 0, request: 260, layer: "cpy".into(), added_ns: 9_000 },
                SpikeInjection { thread: 0, request: 410, layer: IRQ_BUCKET.into(), added_ns: 9_000 },
                SpikeInjection { thread: 0, request: 585, layer: "vfs".into(), added_ns: 9_500 },
                SpikeInjection { thread: 0, request: 790, layer: "cpy".into(), added_ns: 9_500 },
            ],
            irq: no_irqs(1),
            sched: SchedModel { rate: 0.0, duration: NsRange::ZERO },
            device: default_device(),
            slowdown: None,
            think: NsRange::new(500, 1_500),
            cpi_noise_milli: 30,
            spike_cpi_pct: 200,
            depth: ProbeDepth::MAX,
            seed: 1,
        },
        // Single-threaded random reads, almost all page-cache misses. Rare
        // device tails and rare all-layer slowdowns give two kinds of spikes.
        "randread_miss" => ScenarioConfig {
            name: name.into(),
            threads: 1,
            requests_per_thread: 4000,
            pattern: AccessPattern::Random,
            cache: CacheModel { miss_probability: 0.95 },
            layers: miss_path_layers(),
            spikes: Vec::new(),
            irq: IrqModel {
                rate: 0.02,
                duration: vec![NsRange::new(2_000, 6_000)],
                steering: vec![1.0],
                burst: None,
            },
            sched: SchedModel { rate: 0.005, duration: NsRange::new(3_000, 10_000) },
            device: DeviceModel {
                tail_probability: 0.003,
                tail_extra: NsRange::new(150_000, 300_000),
                ..default_device()
            },
            slowdown: Some(SlowdownModel { probability: 0.01, factor_pct: 250 }),
            think: NsRange::new(500, 1_500),
            cpi_noise_milli: 30,
            spike_cpi_pct: 200,
            depth: ProbeDepth::MAX,
            seed: 1,
        },
        // Four threads, 22,500 random reads each. Interrupts are steered
        // unevenly and cluster in the middle of the run (requests that fall
        // in 6000-request windows 5..=13).
        "mt_irq_skew" => {
            let total: u64 = SKEW_IRQ_COUNTS.iter().sum();
            let duration = SKEW_IRQ_COUNTS
                .iter()
                .zip(SKEW_IRQ_NS)
                .map(|(&c, ns)| {
                    let mean = (ns + c / 2) / c;
                    NsRange::around(mean, mean / 10)
                })
                .collect();
            ScenarioConfig {
                name: name.into(),
                threads: 4,
                requests_per_thread: 22_500,
                pattern: AccessPattern::Random,
                cache: CacheModel { miss_probability: 0.9 },
                layers: miss_path_layers(),
                spikes: Vec::new(),
                irq: IrqModel {
                    rate: total as f64 / 90_000.0,
                    duration,
                    steering: SKEW_IRQ_COUNTS.iter().map(|&c| c as f64).collect(),
                    burst: Some(IrqBurst {
                        first_request: 6_000,
                        last_request: 19_500,
                        fraction: 0.9,
                        storm_min: 6,
                        storm_max: 10,
                    }),
                },
                sched: SchedModel { rate: 0.01, duration: NsRange::new(2_000, 8_000) },
                device: DeviceModel { service: NsRange::new(60_000, 90_000), ..default_device() },
                slowdown: None,
                think: NsRange::new(500, 1_500),
                cpi_noise_milli: 30,
                spike_cpi_pct: 200,
                depth: ProbeDepth::MAX,
                seed: 1,
            }
        }
        other => return Err(ScenarioError::UnknownPreset(other.to_owned())),
    };
    Ok(cfg)
}

impl ScenarioConfig {
    /// One thread, one cache-hit request, `vfs_ns` in the vfs layer and
    /// nothing else.
    pub fn single_request(vfs_ns: u64, depth: ProbeDepth) -> Self {
        ScenarioConfig {
            name: "single".into(),
            threads: 1,
            requests_per_thread: 1,
            pattern: AccessPattern::Sequential,
            cache: CacheModel { miss_probability: 0.0 },
            layers: vec![layer("vfs", vfs_ns, 0, 1000)],
            spikes: Vec::new(),
            irq: no_irqs(1),
            sched: SchedModel { rate: 0.0, duration: NsRange::ZERO },
            device: default_device(),
            slowdown: None,
            think: NsRange::ZERO,
            cpi_noise_milli: 0,
            spike_cpi_pct: 100,
            depth,
            seed: 0,
        }
    }

    pub fn total_requests(&self) -> usize {
        self.threads * self.requests_per_thread
    }

    pub fn layer_latency(&self, name: &str) -> Option<&LayerLatency> {
        self.layers.iter().find(|l| l.layer == name)
    }

    /// Bounds on the un-spiked latency of a cache hit with no interference.
    pub fn hit_baseline_bounds(&self) -> (u64, u64) {
        ["vfs", "fs", "mm", "cpy"].iter().filter_map(|l| self.layer_latency(l)).fold((0, 0), |(lo, hi), l| {
            (lo + l.mean_ns.saturating_sub(l.jitter_ns), hi + l.mean_ns + l.jitter_ns)
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.threads == 0 || self.threads > 255 {
            return bad(format!("threads must be in 1..=255, got {}", self.threads));
        }
        if self.requests_per_thread == 0 {
            return bad("requests_per_thread must be at least 1".into());
        }
        let probs = [
            ("cache.miss_probability", self.cache.miss_probability),
            ("sched.rate", self.sched.rate),
            ("device.tail_probability", self.device.tail_probability),
            ("slowdown.probability", self.slowdown.as_ref().map_or(0.0, |s| s.probability)),
        ];
        for (what, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{what} must be within [0, 1], got {p}"));
            }
        }
        if !(self.irq.rate.is_finite() && self.irq.rate >= 0.0) {
            return bad(format!("irq.rate must be a non-negative number, got {}", self.irq.rate));
        }
        if self.irq.steering.len() != self.threads {
            return bad(format!("irq.steering needs {} weights, got {}", self.threads, self.irq.steering.len()));
        }
        if self.irq.steering.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("irq.steering weights must be non-negative".into());
        }
        if self.irq.steering.iter().sum::<f64>() <= 0.0 {
            return bad("irq.steering weights must sum to more than zero".into());
        }
        if !(self.irq.duration.len() == 1 || self.irq.duration.len() == self.threads) {
            return bad("irq.duration needs one range or one per thread".into());
        }
        let mut ranges = vec![
            ("sched.duration", self.sched.duration),
            ("device.service", self.device.service),
            ("device.tail_extra", self.device.tail_extra),
            ("device.completion_irq", self.device.completion_irq),
            ("device.wakeup", self.device.wakeup),
            ("think", self.think),
        ];
        ranges.extend(self.irq.duration.iter().map(|r| ("irq.duration", *r)));
        for (what, r) in ranges {
            if r.lo > r.hi {
                return bad(format!("{what}: lo {} > hi {}", r.lo, r.hi));
            }
        }
        if let Some(b) = &self.irq.burst {
            if b.first_request >= b.last_request || b.last_request > self.requests_per_thread {
                return bad("irq.burst request band is empty or out of range".into());
            }
            if !(0.0..=1.0).contains(&b.fraction) || b.storm_min == 0 || b.storm_min > b.storm_max {
                return bad("irq.burst fraction or storm size invalid".into());
            }
        }
        for l in &self.layers {
            if !LAYERS.contains(&l.layer.as_str()) {
                return bad(format!("unknown layer {:?}", l.layer));
            }
            if l.cpi_milli == 0 {
                return bad(format!("layer {:?} needs a positive cpi", l.layer));
            }
            if l.cpi_milli <= self.cpi_noise_milli {
                return bad(format!("cpi noise exceeds layer {:?} cpi", l.layer));
            }
        }
        for s in &self.spikes {
            if s.thread >= self.threads || s.request >= self.requests_per_thread {
                return bad(format!("spike at thread {} request {} is out of range", s.thread, s.request));
            }
            if s.layer != IRQ_BUCKET && !LAYERS.contains(&s.layer.as_str()) {
                return bad(format!("spike layer {:?} unknown", s.layer));
            }
        }
        if self.spike_cpi_pct == 0 {
            return bad("spike_cpi_pct must be positive".into());
        }
        Ok(())
    }
}
