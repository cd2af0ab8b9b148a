//! Append-only event log. Every state change is written and synced here
//! before it is applied in memory; replaying the log rebuilds the state.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ExperimentSession, Response};
use crate::ExperimentError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session: ExperimentSession,
    },
    ResponseRecorded {
        session_id: String,
        response: Response,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
}

#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
}

impl EventLog {
    /// Log kept in memory only; nothing survives a restart.
    pub fn ephemeral() -> Self {
        EventLog {
            path: None,
            file: None,
        }
    }

    /// Opens `path` for appending and returns the events already in it.
    ///
    /// A final line without a newline is a write cut short by a crash; it is
    /// dropped and the file truncated to the last complete event.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>), ExperimentError> {
        let io = |e: std::io::Error| ExperimentError::Storage(format!("{}: {e}", path.display()));
        let mut events = Vec::new();
        let mut good_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(path).map_err(io)?);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(io)?;
                if read == 0 {
                    break;
                }
                n += 1;
                if !line.ends_with('\n') {
                    log::warn!("{}: dropping incomplete final event", path.display());
                    break;
                }
                if line.trim().is_empty() {
                    good_len += read as u64;
                    continue;
                }
                let e: Event = serde_json::from_str(&line).map_err(|e| {
                    ExperimentError::Storage(format!("{} line {n}: {e}", path.display()))
                })?;
                events.push(e);
                good_len += read as u64;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        if file.metadata().map_err(io)?.len() > good_len {
            file.set_len(good_len).map_err(io)?;
        }
        Ok((
            EventLog {
                path: Some(path.to_path_buf()),
                file: Some(file),
            },
            events,
        ))
    }

    pub fn append(&mut self, event: &Event) -> Result<(), ExperimentError> {
        let Some(file) = self.file.as_mut() else {
            return Ok(());
        };
        let mut line = serde_json::to_string(event).expect("serializable");
        line.push('\n');
        let path = self.path.as_deref().unwrap_or(Path::new("-"));
        let io = |e: std::io::Error| ExperimentError::Storage(format!("{}: {e}", path.display()));
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)
    }
}
