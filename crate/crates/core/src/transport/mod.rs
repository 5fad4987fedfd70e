//! Moving records from probe handlers to the back end.
//!
//! [`ring`] is the per-cpu buffer probe handlers write into, [`capture`]
//! pairs the rings with the agent's ordered view of them, [`wire`] is the
//! batch encoding, [`file`] the on-disk trace format and [`net`] the
//! agent/collector protocol.

pub mod capture;
pub mod file;
pub mod net;
pub mod ring;
pub mod wire;

pub use capture::{capture, AgentSource, Tracer, TracerStats};
pub use file::{decode_trace, encode_trace, read_trace_file, write_trace_file, TraceFileError, TraceWriter, FILE_BATCH_RECORDS};
pub use net::{agent_run, collector_serve, AgentConfig, AgentStats, CollectStats, TransportError, DEFAULT_PERIOD};
pub use ring::{ring, PushResult, RingConsumer, RingProducer, DEFAULT_RING_BYTES};
pub use wire::{decode_batch, encode_batch, WireBatch, WireError, RECORD_SIZE};
