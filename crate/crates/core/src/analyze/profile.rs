use std::fmt;

use serde::{Deserialize, Serialize};

use crate::trace::RequestId;

/// Self time and hardware-counter deltas attributed to one layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: String,
    pub self_ns: u64,
    pub cycles: u64,
    pub instructions: u64,
}

/// Per-request latency breakdown.
///
/// `total_ns` always equals the sum of layer self times, `irq_ns`,
/// `sched_ns`, `io_wait_ns` and `unattributed_ns`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RequestProfile {
    pub rid: RequestId,
    pub pid: u32,
    pub tid: u32,
    pub cpu: u8,
    pub start_ns: u64,
    pub end_ns: u64,
    pub total_ns: u64,
    /// One entry per configured layer, in layer-description order.
    pub layers: Vec<LayerStat>,
    pub irq_ns: u64,
    pub irq_count: u64,
    pub sched_ns: u64,
    pub io_wait_ns: u64,
    pub unattributed_ns: u64,
}

impl RequestProfile {
    pub fn layer_ns(&self, layer: &str) -> Option<u64> {
        self.layers.iter().find(|l| l.layer == layer).map(|l| l.self_ns)
    }

    pub fn component_sum(&self) -> u64 {
        self.layers.iter().map(|l| l.self_ns).sum::<u64>()
            + self.irq_ns
            + self.sched_ns
            + self.io_wait_ns
            + self.unattributed_ns
    }

    pub fn is_conserved(&self) -> bool {
        self.component_sum() == self.total_ns
    }

    pub fn cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.cycles).sum()
    }

    pub fn instructions(&self) -> u64 {
        self.layers.iter().map(|l| l.instructions).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpiScope<'a> {
    Request,
    Layer(&'a str),
}

/// Cycles-per-instruction kept as the exact counter pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cpi {
    pub cycles: u64,
    pub instructions: u64,
}

impl Cpi {
    pub fn new(cycles: u64, instructions: u64) -> Option<Self> {
        (instructions > 0).then_some(Cpi { cycles, instructions })
    }

    pub fn ratio(self) -> f64 {
        self.cycles as f64 / self.instructions as f64
    }

    /// Ratio rounded to three decimals.
    pub fn rounded(self) -> f64 {
        (self.ratio() * 1000.0).round() / 1000.0
    }
}

impl fmt::Display for Cpi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.ratio())
    }
}

impl PartialOrd for Cpi {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        // a/b vs c/d without rounding
        let lhs = u128::from(self.cycles) * u128::from(other.instructions);
        let rhs = u128::from(other.cycles) * u128::from(self.instructions);
        Some(lhs.cmp(&rhs))
    }
}

/// CPI over the whole request (all layer segments) or one layer. `None`
/// when no instructions retired in that scope.
pub fn cpi_of(profile: &RequestProfile, scope: CpiScope<'_>) -> Option<Cpi> {
    match scope {
        CpiScope::Request => Cpi::new(profile.cycles(), profile.instructions()),
        CpiScope::Layer(name) => {
            let l = profile.layers.iter().find(|l| l.layer == name)?;
            Cpi::new(l.cycles, l.instructions)
        }
    }
}

/// JSON-lines shape of a profile: the counters plus derived CPI values.
#[derive(Serialize, Deserialize)]
struct ProfileJson {
    rid: u64,
    pid: u32,
    tid: u32,
    cpu: u8,
    start_ns: u64,
    end_ns: u64,
    total_ns: u64,
    layers: Vec<LayerJson>,
    irq_ns: u64,
    irq_count: u64,
    sched_ns: u64,
    io_wait_ns: u64,
    unattributed_ns: u64,
    cycles: u64,
    instructions: u64,
    cpi: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    layer: String,
    self_ns: u64,
    cycles: u64,
    instructions: u64,
    cpi: Option<f64>,
}

impl Serialize for RequestProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ProfileJson {
            rid: self.rid.0,
            pid: self.pid,
            tid: self.tid,
            cpu: self.cpu,
            start_ns: self.start_ns,
            end_ns: self.end_ns,
            total_ns: self.total_ns,
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    layer: l.layer.clone(),
                    self_ns: l.self_ns,
                    cycles: l.cycles,
                    instructions: l.instructions,
                    cpi: Cpi::new(l.cycles, l.instructions).map(Cpi::rounded),
                })
                .collect(),
            irq_ns: self.irq_ns,
            irq_count: self.irq_count,
            sched_ns: self.sched_ns,
            io_wait_ns: self.io_wait_ns,
            unattributed_ns: self.unattributed_ns,
            cycles: self.cycles(),
            instructions: self.instructions(),
            cpi: cpi_of(self, CpiScope::Request).map(Cpi::rounded),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RequestProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = ProfileJson::deserialize(d)?;
        Ok(RequestProfile {
            rid: RequestId(j.rid),
            pid: j.pid,
            tid: j.tid,
            cpu: j.cpu,
            start_ns: j.start_ns,
            end_ns: j.end_ns,
            total_ns: j.total_ns,
            layers: j
                .layers
                .into_iter()
                .map(|l| LayerStat { layer: l.layer, self_ns: l.self_ns, cycles: l.cycles, instructions: l.instructions })
                .collect(),
            irq_ns: j.irq_ns,
            irq_count: j.irq_count,
            sched_ns: j.sched_ns,
            io_wait_ns: j.io_wait_ns,
            unattributed_ns: j.unattributed_ns,
        })
    }
}
