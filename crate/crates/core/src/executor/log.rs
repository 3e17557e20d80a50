//! Commit log: one JSON object per line after a header line.
//!
//! ```text
//! {"format":1,"kind":"commit-log"}
//! {"attempt":12,"txn_type":0,"ts":40,"worker":1,"reads":[[0,"0001",3,0]],"writes":[[0,"0001",12,1]]}
//! ```
//! Each access is `[table, hex key, attempt, seqno]`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Key, TableId, VersionId};

pub const LOG_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LoggedAccess {
    pub table: TableId,
    pub key: Key,
    pub vid: VersionId,
}

impl Serialize for LoggedAccess {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.table.0, hex::encode(&self.key), self.vid.attempt, self.vid.seqno).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LoggedAccess {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (table, key, attempt, seqno): (u32, String, u64, u32) = Deserialize::deserialize(d)?;
        let key = hex::decode(&key).map_err(serde::de::Error::custom)?;
        Ok(Self { table: TableId(table), key, vid: VersionId { attempt, seqno } })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub attempt: u64,
    pub txn_type: usize,
    /// Logical timestamp taken once every write latch is held.
    pub ts: u64,
    #[serde(default)]
    pub worker: u32,
    pub reads: Vec<LoggedAccess>,
    pub writes: Vec<LoggedAccess>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: u32,
    kind: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitLog {
    pub records: Vec<CommitRecord>,
}

impl CommitLog {
    pub fn new(records: Vec<CommitRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = Header { format: LOG_FORMAT, kind: "commit-log".into() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut lines = r.lines().enumerate();
        let header: Header = match lines.next() {
            None => return Err(LogError::Malformed { line: 1, msg: "empty log".into() }),
            Some((_, line)) => serde_json::from_str(&line?)
                .map_err(|e| LogError::Malformed { line: 1, msg: e.to_string() })?,
        };
        if header.format != LOG_FORMAT || header.kind != "commit-log" {
            return Err(LogError::Malformed { line: 1, msg: "not a commit log".into() });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CommitRecord = serde_json::from_str(&line)
                .map_err(|e| LogError::Malformed { line: i + 1, msg: e.to_string() })?;
            records.push(rec);
        }
        Ok(Self { records })
    }
}
