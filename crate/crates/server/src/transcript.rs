use std::collections::BTreeMap;
use std::path::Path;

use realchart::protocol::TranscriptEntry;
use realchart::store::{JsonlLog, StoreError};
use serde::{Deserialize, Serialize};

/// One frame in the shared transcript log, tagged with the connection it
/// belongs to. Lines from concurrent sessions interleave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub connection: u64,
    #[serde(flatten)]
    pub entry: TranscriptEntry,
}

/// Append-only JSONL transcript of every frame the server sends or receives.
#[derive(Debug)]
pub struct TranscriptLog {
    log: JsonlLog,
}

impl TranscriptLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Ok(Self {
            log: JsonlLog::open(path)?,
        })
    }

    pub fn append(&self, connection: u64, entry: &TranscriptEntry) -> Result<(), StoreError> {
        self.log.append(&TranscriptLine {
            connection,
            entry: entry.clone(),
        })?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }

    /// Complete lines currently in the log at `path`.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<TranscriptLine>, StoreError> {
        realchart::store::read_complete_lines(path)?
            .iter()
            .map(|l| serde_json::from_str(l).map_err(StoreError::from))
            .collect()
    }
}

/// Splits interleaved lines into per-connection transcripts, order kept.
pub fn demultiplex(lines: &[TranscriptLine]) -> BTreeMap<u64, Vec<TranscriptEntry>> {
    let mut out: BTreeMap<u64, Vec<TranscriptEntry>> = BTreeMap::new();
    for line in lines {
        out.entry(line.connection).or_default().push(line.entry.clone());
    }
    out
}
