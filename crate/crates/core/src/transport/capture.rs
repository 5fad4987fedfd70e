//! Front end of a capture: one ring per cpu on the producer side, and the
//! agent's view that drains them back into a single ordered stream.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::trace::TraceRecord;

use super::ring::{ring, PushResult, RingConsumer, RingProducer};

struct Published {
    accepted: AtomicU64,
    closed: AtomicBool,
}

/// Producer side: routes each record to its cpu's ring.
pub struct Tracer {
    rings: Vec<RingProducer>,
    published: Arc<Published>,
    offered: u64,
    accepted: u64,
}

/// Agent side: yields accepted records in emission order.
pub struct AgentSource {
    rings: Vec<RingConsumer>,
    pending: Vec<VecDeque<TraceRecord>>,
    published: Arc<Published>,
    emitted: u64,
}

/// Creates rings for `cpus` cpus, `ring_bytes` each.
pub fn capture(cpus: usize, ring_bytes: usize) -> (Tracer, AgentSource) {
    let published = Arc::new(Published { accepted: AtomicU64::new(0), closed: AtomicBool::new(false) });
    let (producers, consumers): (Vec<_>, Vec<_>) = (0..cpus).map(|_| ring(ring_bytes)).unzip();
    (
        Tracer { rings: producers, published: published.clone(), offered: 0, accepted: 0 },
        AgentSource { pending: vec![VecDeque::new(); cpus], rings: consumers, published, emitted: 0 },
    )
}

impl Tracer {
    /// Records must be offered in (ts, cpu) order.
    pub fn emit(&mut self, r: &TraceRecord) -> PushResult {
        self.offered += 1;
        let res = match self.rings.get_mut(r.cpu as usize) {
            Some(ring) => ring.push(r),
            None => PushResult::Dropped,
        };
        if res == PushResult::Accepted {
            self.accepted += 1;
            self.published.accepted.store(self.accepted, Ordering::Release);
        }
        res
    }

    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn dropped(&self) -> u64 {
        self.offered - self.accepted
    }

    /// Marks the end of the capture.
    pub fn close(self) -> TracerStats {
        self.published.closed.store(true, Ordering::Release);
        TracerStats { offered: self.offered, dropped: self.offered - self.accepted }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TracerStats {
    pub offered: u64,
    pub dropped: u64,
}

impl AgentSource {
    /// Drains every ring and returns the records that are now known to be
    /// complete, in emission order.
    pub fn poll(&mut self) -> Vec<TraceRecord> {
        let target = self.published.accepted.load(Ordering::Acquire);
        for (ring, q) in self.rings.iter_mut().zip(&mut self.pending) {
            q.extend(ring.drain(usize::MAX));
        }
        let n = (target - self.emitted) as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let (cpu, _) = self
                .pending
                .iter()
                .enumerate()
                .filter_map(|(i, q)| q.front().map(|r| (i, (r.ts, r.cpu))))
                .min_by_key(|&(_, key)| key)
                .expect("published records are visible after the acquire load");
            out.push(self.pending[cpu].pop_front().unwrap());
        }
        self.emitted = target;
        out
    }

    /// True once the tracer closed and every accepted record was polled.
    pub fn is_finished(&self) -> bool {
        self.published.closed.load(Ordering::Acquire)
            && self.emitted == self.published.accepted.load(Ordering::Acquire)
    }
}
