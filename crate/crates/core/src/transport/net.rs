//! Agent → collector protocol over a reliable byte stream (TCP).
//!
//! On connect the collector sends `u64 committed`, the number of records it
//! has persisted this session. The agent resumes from there: it sends wire
//! batches (with the name deltas needed on this connection) and waits for a
//! `u64 committed` ack after each. `P2LE` ends the session; the collector
//! acks it once the trace file is complete. Batches are only committed
//! after they were read in full, so a cut connection never leaves a partial
//! batch behind.

use std::collections::{HashSet, VecDeque};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::trace::{FunctionId, StringTable, TraceRecord};

use super::capture::AgentSource;
use super::file::{TraceFileError, TraceWriter};
use super::wire::{absorb_batch, decode_batch, encode_batch, WireBatch, WireError, BATCH_MAGIC, END_MAGIC, MAX_BATCH_RECORDS, RECORD_SIZE};

pub const DEFAULT_PERIOD: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("could not reach collector at {addr} after {attempts} attempts: {last}")]
    Unreachable { addr: SocketAddr, attempts: u32, last: io::Error },
    #[error("collector reports {committed} records committed, agent already discarded up to {acked}")]
    Diverged { committed: u64, acked: u64 },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    File(#[from] TraceFileError),
}

#[derive(Clone, Debug)]
pub struct AgentConfig {
    /// How often the rings are drained.
    pub period: Duration,
    pub batch_records: usize,
    /// Delay between reconnect attempts, and how many to make in a row.
    pub retry_delay: Duration,
    pub max_attempts: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { period: DEFAULT_PERIOD, batch_records: 4096, retry_delay: Duration::from_millis(50), max_attempts: 100 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub records: u64,
    pub batches: u64,
    pub connections: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CollectStats {
    pub records: u64,
    pub batches: u64,
    pub connections: u64,
    /// Connections that ended without the end marker.
    pub broken: u64,
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

struct Link {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    named: HashSet<FunctionId>,
}

fn connect(addr: SocketAddr, cfg: &AgentConfig) -> Result<(Link, u64), TransportError> {
    let mut last = None;
    for attempt in 0..cfg.max_attempts.max(1) {
        if attempt > 0 {
            thread::sleep(cfg.retry_delay);
        }
        let attempt_result = (|| -> io::Result<(Link, u64)> {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(Duration::from_secs(30)))?;
            let mut reader = BufReader::new(stream.try_clone()?);
            let committed = read_u64(&mut reader)?;
            Ok((Link { reader, writer: BufWriter::new(stream), named: HashSet::new() }, committed))
        })();
        match attempt_result {
            Ok(x) => return Ok(x),
            Err(e) => last = Some(e),
        }
    }
    Err(TransportError::Unreachable { addr, attempts: cfg.max_attempts.max(1), last: last.unwrap() })
}

/// Ships everything the tracer publishes to the collector at `addr`, then
/// ends the session. While disconnected the rings are not drained, so a
/// long outage turns into counted drops on the producer side.
pub fn agent_run(
    addr: SocketAddr,
    mut source: AgentSource,
    strings: &StringTable,
    cfg: &AgentConfig,
) -> Result<AgentStats, TransportError> {
    let mut stats = AgentStats::default();
    // Records not yet acknowledged; `base` is the session index of the front.
    let mut unacked: VecDeque<TraceRecord> = VecDeque::new();
    let mut base = 0u64;
    let mut link: Option<Link> = None;

    loop {
        if link.is_none() {
            let (l, committed) = connect(addr, cfg)?;
            stats.connections += 1;
            if committed < base || committed > base + unacked.len() as u64 {
                return Err(TransportError::Diverged { committed, acked: base });
            }
            unacked.drain(..(committed - base) as usize);
            base = committed;
            link = Some(l);
        }
        let l = link.as_mut().unwrap();
        let tick = Instant::now();
        let finished = source.is_finished();
        unacked.extend(source.poll());

        let mut failed = false;
        while !unacked.is_empty() {
            let n = unacked.len().min(cfg.batch_records);
            let records: Vec<TraceRecord> = unacked.iter().take(n).copied().collect();
            match send_batch(l, &records, strings).and_then(|_| read_u64(&mut l.reader)) {
                Ok(committed) if committed == base + n as u64 => {
                    unacked.drain(..n);
                    base = committed;
                    stats.records += n as u64;
                    stats.batches += 1;
                }
                Ok(committed) => return Err(TransportError::Diverged { committed, acked: base }),
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            link = None;
            continue;
        }
        if finished && unacked.is_empty() {
            let end = l.writer.write_all(&END_MAGIC).and_then(|_| l.writer.flush()).and_then(|_| read_u64(&mut l.reader));
            match end {
                Ok(committed) if committed == base => return Ok(stats),
                Ok(committed) => return Err(TransportError::Diverged { committed, acked: base }),
                Err(_) => {
                    link = None;
                    continue;
                }
            }
        }
        if let Some(rest) = cfg.period.checked_sub(tick.elapsed()) {
            thread::sleep(rest);
        }
    }
}

fn send_batch(l: &mut Link, records: &[TraceRecord], strings: &StringTable) -> io::Result<()> {
    let mut ids: Vec<FunctionId> = records.iter().map(|r| r.func).filter(|f| !l.named.contains(f)).collect();
    ids.sort();
    ids.dedup();
    let mut names = Vec::with_capacity(ids.len());
    for id in &ids {
        let name = strings
            .name(*id)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("function id {} has no name", id.0)))?;
        names.push((*id, name.to_owned()));
    }
    let batch = WireBatch { names, records: records.to_vec() };
    l.writer.write_all(&encode_batch(&batch))?;
    l.writer.flush()?;
    l.named.extend(ids);
    Ok(())
}

fn take(r: &mut impl Read, n: usize, buf: &mut Vec<u8>) -> io::Result<()> {
    let at = buf.len();
    buf.resize(at + n, 0);
    r.read_exact(&mut buf[at..])
}

enum Frame {
    Batch(Vec<u8>),
    End,
}

fn read_frame(r: &mut impl Read) -> Result<Frame, TransportError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic == END_MAGIC {
        return Ok(Frame::End);
    }
    if magic != BATCH_MAGIC {
        return Err(WireError::BadMagic { offset: 0, found: magic.to_vec() }.into());
    }
    let mut buf = magic.to_vec();
    take(r, 4, &mut buf)?;
    let names = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    for _ in 0..names {
        take(r, 5, &mut buf)?;
        let len = buf[buf.len() - 1] as usize;
        take(r, len, &mut buf)?;
    }
    take(r, 4, &mut buf)?;
    let count = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    if count > MAX_BATCH_RECORDS {
        return Err(WireError::Oversized { offset: (buf.len() - 4) as u64, count }.into());
    }
    take(r, count as usize * RECORD_SIZE, &mut buf)?;
    Ok(Frame::Batch(buf))
}

/// Accepts agent connections on `listener` until a session ends with the
/// end marker, persisting records through `writer` as they are committed.
/// Dropped connections are tolerated; the agent resumes on reconnect.
pub fn collector_serve<W: Write>(listener: &TcpListener, writer: W) -> Result<(CollectStats, W), TransportError> {
    let mut writer = TraceWriter::new(writer);
    let mut table = StringTable::new();
    let mut stats = CollectStats::default();
    loop {
        let (stream, _) = listener.accept()?;
        stats.connections += 1;
        match serve_connection(stream, &mut writer, &mut table, &mut stats) {
            Ok(true) => {
                let w = writer.finish(&table)?;
                return Ok((stats, w));
            }
            Ok(false) | Err(TransportError::Io(_)) => stats.broken += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Returns Ok(true) when the session ended cleanly.
fn serve_connection<W: Write>(
    stream: TcpStream,
    writer: &mut TraceWriter<W>,
    table: &mut StringTable,
    stats: &mut CollectStats,
) -> Result<bool, TransportError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(60)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut out = stream;
    out.write_all(&stats.records.to_le_bytes())?;
    loop {
        match read_frame(&mut reader) {
            Ok(Frame::Batch(bytes)) => {
                let (batch, _) = decode_batch(&bytes, 0)?;
                absorb_batch(table, &batch, 0)?;
                writer.write(&batch.records, table)?;
                stats.records += batch.records.len() as u64;
                stats.batches += 1;
                out.write_all(&stats.records.to_le_bytes())?;
            }
            Ok(Frame::End) => {
                out.write_all(&stats.records.to_le_bytes())?;
                return Ok(true);
            }
            Err(TransportError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(false),
            Err(e) => return Err(e),
        }
    }
}
