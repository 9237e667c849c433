//! Event trace: optional full record plus a bounded tail kept for
//! diagnosing invariant violations.

use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{self, Write};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub kind: String,
    pub actor: String,
    pub detail: String,
}

pub const TAIL_LEN: usize = 256;

#[derive(Debug, Default)]
pub struct Tracer {
    full: Option<Vec<TraceRecord>>,
    tail: VecDeque<TraceRecord>,
}

impl Tracer {
    pub fn new(keep_all: bool) -> Self {
        Tracer {
            full: keep_all.then(Vec::new),
            tail: VecDeque::with_capacity(TAIL_LEN),
        }
    }

    pub fn record(&mut self, at: SimTime, kind: &str, actor: impl Into<String>, detail: impl Into<String>) {
        let rec = TraceRecord {
            time_us: at.as_micros(),
            kind: kind.to_owned(),
            actor: actor.into(),
            detail: detail.into(),
        };
        if self.tail.len() == TAIL_LEN {
            self.tail.pop_front();
        }
        if let Some(full) = &mut self.full {
            full.push(rec.clone());
        }
        self.tail.push_back(rec);
    }

    pub fn tail(&self) -> Vec<TraceRecord> {
        self.tail.iter().cloned().collect()
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.full.unwrap_or_default()
    }
}

/// Writes records as one JSON object per line.
pub fn write_jsonl<W: Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
