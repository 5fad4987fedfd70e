//! Single-producer single-consumer byte ring holding encoded records.
//!
//! Records are stored as their 46-byte wire encoding and may wrap around
//! the end of the buffer. A push is accepted only if the whole record fits
//! in the free space; otherwise it is dropped and counted, so unconsumed
//! records are never overwritten.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::trace::TraceRecord;

use super::wire::{decode_record, encode_record, RECORD_SIZE};

/// 1024 pages of 4 KiB.
pub const DEFAULT_RING_BYTES: usize = 1024 * 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushResult {
    Accepted,
    Dropped,
}

struct Shared {
    buf: Box<[UnsafeCell<u8>]>,
    /// Total bytes ever consumed; written by the consumer only.
    head: AtomicUsize,
    /// Total bytes ever produced; written by the producer only.
    tail: AtomicUsize,
    dropped: AtomicU64,
}

// The producer only writes bytes in [tail, head + cap) and the consumer
// only reads bytes in [head, tail); the two ranges never overlap and the
// Release/Acquire pairs on head/tail order the byte accesses.
unsafe impl Sync for Shared {}
unsafe impl Send for Shared {}

impl Shared {
    fn cap(&self) -> usize {
        self.buf.len()
    }

    /// # Safety
    /// Caller must own `[at, at + src.len())` (mod capacity).
    unsafe fn copy_in(&self, at: usize, src: &[u8]) {
        let cap = self.cap();
        for (i, b) in src.iter().enumerate() {
            *self.buf[(at + i) % cap].get() = *b;
        }
    }

    /// # Safety
    /// Caller must own `[at, at + dst.len())` (mod capacity).
    unsafe fn copy_out(&self, at: usize, dst: &mut [u8]) {
        let cap = self.cap();
        for (i, b) in dst.iter_mut().enumerate() {
            *b = *self.buf[(at + i) % cap].get();
        }
    }
}

pub struct RingProducer {
    shared: Arc<Shared>,
    scratch: Vec<u8>,
}

pub struct RingConsumer {
    shared: Arc<Shared>,
}

/// Creates a ring of `capacity` bytes.
pub fn ring(capacity: usize) -> (RingProducer, RingConsumer) {
    let buf: Box<[UnsafeCell<u8>]> = (0..capacity).map(|_| UnsafeCell::new(0)).collect();
    let shared = Arc::new(Shared { buf, head: AtomicUsize::new(0), tail: AtomicUsize::new(0), dropped: AtomicU64::new(0) });
    (RingProducer { shared: shared.clone(), scratch: Vec::with_capacity(RECORD_SIZE) }, RingConsumer { shared })
}

impl RingProducer {
    pub fn push(&mut self, r: &TraceRecord) -> PushResult {
        let s = &self.shared;
        let tail = s.tail.load(Ordering::Relaxed);
        let head = s.head.load(Ordering::Acquire);
        if s.cap() - (tail - head) < RECORD_SIZE {
            s.dropped.fetch_add(1, Ordering::Relaxed);
            return PushResult::Dropped;
        }
        self.scratch.clear();
        encode_record(r, &mut self.scratch);
        // SAFETY: the free region starts at tail and is at least one record long.
        unsafe { s.copy_in(tail % s.cap(), &self.scratch) };
        s.tail.store(tail + RECORD_SIZE, Ordering::Release);
        PushResult::Accepted
    }

    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn capacity(&self) -> usize {
        self.shared.cap()
    }
}

impl RingConsumer {
    /// Removes up to `max` records in FIFO order.
    pub fn drain(&mut self, max: usize) -> Vec<TraceRecord> {
        let s = &self.shared;
        let mut head = s.head.load(Ordering::Relaxed);
        let tail = s.tail.load(Ordering::Acquire);
        let n = ((tail - head) / RECORD_SIZE).min(max);
        let mut out = Vec::with_capacity(n);
        let mut raw = [0u8; RECORD_SIZE];
        for _ in 0..n {
            // SAFETY: [head, tail) holds published records.
            unsafe { s.copy_out(head % s.cap(), &mut raw) };
            out.push(decode_record(&raw, 0).expect("ring holds records encoded by the producer"));
            head += RECORD_SIZE;
        }
        s.head.store(head, Ordering::Release);
        out
    }

    pub fn len(&self) -> usize {
        let s = &self.shared;
        (s.tail.load(Ordering::Acquire) - s.head.load(Ordering::Relaxed)) / RECORD_SIZE
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }
}
