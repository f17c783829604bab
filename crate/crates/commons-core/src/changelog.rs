//! Append-only operation log.
//!
//! The log is both the write-ahead durability layer for the in-memory tables
//! and the change feed served to peers. Entries carry monotonically
//! increasing sequence numbers; a peer cursor is simply the last sequence it
//! has applied.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accessctl::Acl;
use crate::error::{CommonsError, Result};
use crate::idmodel::{Attributes, DigitalIdRecord, HashRecord};
use crate::metastore::{MetadataDocument, MetadataSchema};

/// One replayable mutation against the commons tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ChangeOp {
    AliasPut { record: DigitalIdRecord },
    AliasDelete { alias: String },
    HashPut { record: HashRecord },
    AttrPut { alias: String, attributes: Attributes },
    AclPut { target: String, acl: Acl },
    DocPut { document: MetadataDocument },
    SchemaPut { schema: MetadataSchema },
    CursorSet { peer: String, cursor: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub op: ChangeOp,
}

/// A page of the change feed, as served to peers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangeBatch {
    pub entries: Vec<ChangeEntry>,
    pub next_cursor: u64,
    /// Oldest sequence still retained; a cursor older than this is a gap.
    pub oldest: u64,
}

/// Newline-delimited JSON log with an in-memory copy for feed reads.
pub struct ChangeLog {
    file: File,
    entries: Vec<ChangeEntry>,
    next_seq: u64,
}

impl ChangeLog {
    /// Open (or create) the log at `path` and replay existing entries.
    pub fn open(path: &Path) -> Result<ChangeLog> {
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(serde_json::from_str::<ChangeEntry>(&line)?);
            }
        }
        let next_seq = entries.last().map(|e| e.seq + 1).unwrap_or(1);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ChangeLog {
            file,
            entries,
            next_seq,
        })
    }

    /// Append an op, returning its assigned sequence number. The line is
    /// flushed before this returns.
    pub fn append(&mut self, op: ChangeOp) -> Result<u64> {
        let seq = self.next_seq;
        let entry = ChangeEntry { seq, op };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.entries.push(entry);
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn entries(&self) -> &[ChangeEntry] {
        &self.entries
    }

    pub fn oldest_seq(&self) -> u64 {
        self.entries.first().map(|e| e.seq).unwrap_or(1)
    }

    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    /// Feed entries strictly after `since`, up to `limit` per page.
    pub fn since(&self, since: u64, limit: usize) -> Result<ChangeBatch> {
        let oldest = self.oldest_seq();
        // A cursor pointing before the retained window cannot be served
        // without silently losing changes.
        if since + 1 < oldest {
            return Err(CommonsError::FeedGap {
                cursor: since,
                oldest,
            });
        }
        let entries: Vec<ChangeEntry> = self
            .entries
            .iter()
            .filter(|e| e.seq > since)
            .take(limit)
            .cloned()
            .collect();
        let next_cursor = entries.last().map(|e| e.seq).unwrap_or(since);
        Ok(ChangeBatch {
            entries,
            next_cursor,
            oldest,
        })
    }
}
