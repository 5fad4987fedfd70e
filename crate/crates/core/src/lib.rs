//! Per-request, per-layer IO latency profiling.
//!
//! The pipeline mirrors a split tracer: a front end emits fixed-size trace
//! records tagged with a request id, a transport ships them to a collector,
//! and a back end groups records by request and attributes every nanosecond
//! of each request to a layer, to interference (IRQ handling, preemption) or
//! to device wait.
//!
//! * [`trace`]: record vocabulary and stream validation.
//! * [`config`]: profile scripts, layer descriptions, the probe-depth knob.
//! * [`sim`]: deterministic read-path simulator standing in for the kernel.
//! * [`transport`]: ring buffer, wire batches, trace files, agent/collector.
//! * [`analyze`]: grouping, stack-walk attribution, reference oracle.
//! * [`stats`]: percentiles, windowed p99, IRQ fairness, tail attribution
//!   and static report emission.

pub mod analyze;
pub mod config;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod testkit;
pub mod trace;
pub mod transport;

pub use analyze::{analyze, compute_request_profile, oracle_profile, Analysis, RequestProfile};
pub use config::{LayerDescription, ProbeDepth, ProfileDescription};
pub use sim::{preset, simulate, GroundTruth, ScenarioConfig, Simulation};
pub use trace::{EventKind, FunctionId, HwSample, RequestId, StringTable, TraceRecord};
