//! `.p2lt` trace files: concatenated wire batches.
//!
//! Files are written canonically so that the same records always give the
//! same bytes regardless of how they arrived: batches of
//! [`FILE_BATCH_RECORDS`] records (the last one shorter), each carrying the
//! names first used by its records in id order. A capture with no records is
//! a single empty batch.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::trace::{FunctionId, StringTable, TraceRecord};

use super::wire::{absorb_batch, decode_batch, encode_batch, WireBatch, WireError};

pub const FILE_BATCH_RECORDS: usize = 4096;

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Write(#[from] io::Error),
    #[error("record refers to function id {0} missing from the string table")]
    UnnamedFunction(u32),
    #[error(transparent)]
    Decode(#[from] WireError),
}

pub struct TraceWriter<W: Write> {
    out: W,
    pending: Vec<TraceRecord>,
    named: HashSet<FunctionId>,
    batches: u64,
    records: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out, pending: Vec::with_capacity(FILE_BATCH_RECORDS), named: HashSet::new(), batches: 0, records: 0 }
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    /// Appends records; full batches are written immediately.
    pub fn write(&mut self, records: &[TraceRecord], table: &StringTable) -> Result<(), TraceFileError> {
        for r in records {
            self.pending.push(*r);
            if self.pending.len() == FILE_BATCH_RECORDS {
                self.flush_batch(table)?;
            }
        }
        Ok(())
    }

    fn flush_batch(&mut self, table: &StringTable) -> Result<(), TraceFileError> {
        let mut new_ids: Vec<FunctionId> = Vec::new();
        for r in &self.pending {
            if !self.named.contains(&r.func) && !new_ids.contains(&r.func) {
                new_ids.push(r.func);
            }
        }
        new_ids.sort();
        let mut names = Vec::with_capacity(new_ids.len());
        for id in new_ids {
            let name = table.name(id).ok_or(TraceFileError::UnnamedFunction(id.0))?;
            names.push((id, name.to_owned()));
        }
        let batch = WireBatch { names, records: std::mem::take(&mut self.pending) };
        self.out.write_all(&encode_batch(&batch))?;
        self.named.extend(batch.names.iter().map(|(id, _)| *id));
        self.records += batch.records.len() as u64;
        self.batches += 1;
        self.pending = batch.records;
        self.pending.clear();
        Ok(())
    }

    /// Writes the final partial batch (or the single empty batch of an
    /// empty capture) and returns the sink.
    pub fn finish(mut self, table: &StringTable) -> Result<W, TraceFileError> {
        if !self.pending.is_empty() || self.batches == 0 {
            self.flush_batch(table)?;
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn encode_trace(records: &[TraceRecord], table: &StringTable) -> Result<Vec<u8>, TraceFileError> {
    let mut w = TraceWriter::new(Vec::new());
    w.write(records, table)?;
    w.finish(table)
}

pub fn write_trace_file(path: &Path, records: &[TraceRecord], table: &StringTable) -> Result<(), TraceFileError> {
    let bytes = encode_trace(records, table)?;
    fs::write(path, bytes).map_err(|source| TraceFileError::Io { path: path.display().to_string(), source })
}

/// Decodes a whole trace. Every record's function must be named by a delta
/// at or before its batch.
pub fn decode_trace(bytes: &[u8]) -> Result<(Vec<TraceRecord>, StringTable), WireError> {
    let mut table = StringTable::new();
    let mut records = Vec::new();
    let mut pos = 0usize;
    if bytes.is_empty() {
        return Err(WireError::Truncated { offset: 0, needed: 4, available: 0 });
    }
    while pos < bytes.len() {
        let (batch, used) = decode_batch(&bytes[pos..], pos as u64)?;
        absorb_batch(&mut table, &batch, pos as u64)?;
        records.extend(batch.records);
        pos += used;
    }
    Ok((records, table))
}

pub fn read_trace_file(path: &Path) -> Result<(Vec<TraceRecord>, StringTable), TraceFileError> {
    let bytes = fs::read(path).map_err(|source| TraceFileError::Io { path: path.display().to_string(), source })?;
    Ok(decode_trace(&bytes)?)
}
