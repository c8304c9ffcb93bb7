//! Append-only per-session event logs, replayed on startup.

use crate::session::Action;
use serde::{Deserialize, Serialize};
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use tspsense::Instance;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Create { instance: Instance, heuristic: bool },
    Apply { action: Action, at: String },
    Undo,
}

#[derive(Clone, Debug)]
pub struct Journal {
    dir: PathBuf,
}

impl Journal {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Journal { dir: dir.to_path_buf() })
    }

    fn path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    pub fn append(&self, session_id: &str, event: &Event) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(session_id))?;
        f.write_all(&line)?;
        f.sync_data()
    }

    /// Every journaled session as `(id, events)`, sorted by id. Unreadable
    /// trailing lines (an interrupted write) are skipped with a warning.
    pub fn load(&self) -> io::Result<Vec<(String, Vec<Event>)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else { continue };
            let mut events = Vec::new();
            for (k, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(e) => events.push(e),
                    Err(e) => log::warn!("{}:{}: skipping unreadable journal entry: {e}", path.display(), k + 1),
                }
            }
            out.push((id, events));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}
