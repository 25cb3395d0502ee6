//! Append-only JSON-lines log of readmore clicks and submitted answers.
//!
//! Every record is serialized to one buffer and written with a single
//! `write_all` while the writer lock is held, so lines never interleave.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Most examples a learner can reveal per word.
pub const READMORE_CAP: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadmoreEvent {
    pub session: String,
    pub set: String,
    pub word: String,
    /// Examples visible after the click.
    pub revealed_count: usize,
    pub timestamp_ms: u64,
}

impl ReadmoreEvent {
    pub fn validate(&self) -> Result<()> {
        if self.session.is_empty() {
            return Err(Error::BadRequest("session must not be empty".into()));
        }
        if !(1..=READMORE_CAP).contains(&self.revealed_count) {
            return Err(Error::BadRequest(format!(
                "revealed_count {} outside 1..={READMORE_CAP}",
                self.revealed_count
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub session: String,
    pub set: String,
    pub text: String,
    pub timestamp_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Readmore(ReadmoreEvent),
    Answer(AnswerRecord),
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    writer: Mutex<File>,
}

impl EventLog {
    /// Opens for appending, creating the file and its directory if needed.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(Error::io(path))?;
        Ok(Self {
            path: path.to_owned(),
            writer: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &LogRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line).map_err(Error::io(&self.path))?;
        file.flush().map_err(Error::io(&self.path))
    }

    /// Every record in file order.
    pub fn records(&self) -> Result<Vec<LogRecord>> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let file = File::open(&self.path).map_err(Error::io(&self.path))?;
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(Error::io(&self.path))?;
            if !line.is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    /// The most recent answer for `(session, set)`.
    pub fn latest_answer(&self, session: &str, set: &str) -> Result<Option<AnswerRecord>> {
        Ok(self
            .records()?
            .into_iter()
            .filter_map(|r| match r {
                LogRecord::Answer(a) if a.session == session && a.set == set => Some(a),
                _ => None,
            })
            .next_back())
    }
}
