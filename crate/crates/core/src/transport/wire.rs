//! Batch wire format, shared by the network protocol and trace files.
//!
//! ```text
//! batch   := "P2L1" u32:name_count name* u32:record_count record*
//! name    := u32:id u8:len bytes[len]          (UTF-8, 1..=255 bytes)
//! record  := u8:kind u8:cpu u32:pid u32:tid u32:func
//!            u64:rid u64:ts u64:cycles u64:instructions   (46 bytes)
//! ```
//!
//! All integers are little-endian. The name list is a delta: the id→name
//! pairs first needed by this batch's records.

use thiserror::Error;

use crate::trace::{EventKind, FunctionId, HwSample, InternError, RequestId, StringTable, TraceRecord};

pub const BATCH_MAGIC: [u8; 4] = *b"P2L1";
pub const END_MAGIC: [u8; 4] = *b"P2LE";
pub const RECORD_SIZE: usize = 46;
/// Upper bound accepted when decoding, to refuse absurd allocations.
pub const MAX_BATCH_RECORDS: u32 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("byte {offset}: bad magic {found:02x?}")]
    BadMagic { offset: u64, found: Vec<u8> },
    #[error("byte {offset}: truncated, need {needed} bytes, {available} left")]
    Truncated { offset: u64, needed: u64, available: u64 },
    #[error("byte {offset}: unknown event kind {value}")]
    BadKind { offset: u64, value: u8 },
    #[error("byte {offset}: bad name entry: {reason}")]
    BadName { offset: u64, reason: String },
    #[error("byte {offset}: record refers to function id {id} with no name")]
    UnknownFunction { offset: u64, id: u32 },
    #[error("byte {offset}: batch claims {count} records, limit is {MAX_BATCH_RECORDS}")]
    Oversized { offset: u64, count: u32 },
}

/// One decoded batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WireBatch {
    pub names: Vec<(FunctionId, String)>,
    pub records: Vec<TraceRecord>,
}

pub fn encode_record(r: &TraceRecord, out: &mut Vec<u8>) {
    out.push(r.kind.as_u8());
    out.push(r.cpu);
    out.extend_from_slice(&r.pid.to_le_bytes());
    out.extend_from_slice(&r.tid.to_le_bytes());
    out.extend_from_slice(&r.func.0.to_le_bytes());
    out.extend_from_slice(&r.rid.0.to_le_bytes());
    out.extend_from_slice(&r.ts.to_le_bytes());
    out.extend_from_slice(&r.hw.cycles.to_le_bytes());
    out.extend_from_slice(&r.hw.instructions.to_le_bytes());
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Decodes one record; `offset` is only used for error reporting.
pub fn decode_record(b: &[u8; RECORD_SIZE], offset: u64) -> Result<TraceRecord, WireError> {
    let kind = EventKind::from_u8(b[0]).ok_or(WireError::BadKind { offset, value: b[0] })?;
    Ok(TraceRecord {
        kind,
        cpu: b[1],
        pid: u32_at(b, 2),
        tid: u32_at(b, 6),
        func: FunctionId(u32_at(b, 10)),
        rid: RequestId(u64_at(b, 14)),
        ts: u64_at(b, 22),
        hw: HwSample { cycles: u64_at(b, 30), instructions: u64_at(b, 38) },
    })
}

pub fn encode_batch(batch: &WireBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + batch.records.len() * RECORD_SIZE);
    out.extend_from_slice(&BATCH_MAGIC);
    out.extend_from_slice(&(batch.names.len() as u32).to_le_bytes());
    for (id, name) in &batch.names {
        debug_assert!(!name.is_empty() && name.len() <= 255);
        out.extend_from_slice(&id.0.to_le_bytes());
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(batch.records.len() as u32).to_le_bytes());
    for r in &batch.records {
        encode_record(r, &mut out);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(WireError::Truncated { offset: self.offset(), needed: n as u64, available: available as u64 });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32_at(self.take(4)?, 0))
    }
}

/// Decodes the batch at the start of `buf`. Returns the batch and the number
/// of bytes it occupied. Error offsets are `base + position in buf`.
pub fn decode_batch(buf: &[u8], base: u64) -> Result<(WireBatch, usize), WireError> {
    let mut c = Cursor { buf, pos: 0, base };
    let at = c.offset();
    let magic = c.take(4)?;
    if magic != BATCH_MAGIC {
        return Err(WireError::BadMagic { offset: at, found: magic.to_vec() });
    }
    let name_count = c.u32()?;
    let mut names = Vec::new();
    for _ in 0..name_count {
        let at = c.offset();
        let id = c.u32()?;
        let len = c.take(1)?[0] as usize;
        let bytes = c.take(len)?;
        if id == 0 || len == 0 {
            return Err(WireError::BadName { offset: at, reason: "zero id or empty name".into() });
        }
        let name = std::str::from_utf8(bytes)
            .map_err(|_| WireError::BadName { offset: at, reason: "name is not UTF-8".into() })?;
        names.push((FunctionId(id), name.to_owned()));
    }
    let at = c.offset();
    let count = c.u32()?;
    if count > MAX_BATCH_RECORDS {
        return Err(WireError::Oversized { offset: at, count });
    }
    let available = (buf.len() - c.pos) as u64;
    let needed = count as u64 * RECORD_SIZE as u64;
    if available < needed {
        return Err(WireError::Truncated { offset: c.offset(), needed, available });
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = c.offset();
        let raw: &[u8; RECORD_SIZE] = c.take(RECORD_SIZE)?.try_into().unwrap();
        records.push(decode_record(raw, at)?);
    }
    Ok((WireBatch { names, records }, c.pos))
}

/// Applies a batch's name delta to `table` and checks that every record's
/// function is named. `base` is the batch's byte offset.
pub fn absorb_batch(table: &mut StringTable, batch: &WireBatch, base: u64) -> Result<(), WireError> {
    for (id, name) in &batch.names {
        table.bind(*id, name).map_err(|e: InternError| WireError::BadName { offset: base, reason: e.to_string() })?;
    }
    let names_len: usize = batch.names.iter().map(|(_, n)| 5 + n.len()).sum();
    let first_record = base + 8 + names_len as u64 + 4;
    for (i, r) in batch.records.iter().enumerate() {
        if !table.contains(r.func) {
            return Err(WireError::UnknownFunction { offset: first_record + (i * RECORD_SIZE) as u64, id: r.func.0 });
        }
    }
    Ok(())
}
