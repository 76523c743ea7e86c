//! Append-only state file: block cursor, delivered alert keys, and alerts
//! still waiting for the sink.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Alert, WatchError};

pub const STATE_FILE: &str = "state.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "k", rename_all = "kebab-case")]
enum Record {
    Cursor { block: u64 },
    Chain { id: u64 },
    Delivered { key: String },
    Pending { key: String, alert: Box<Alert> },
}

pub struct Store {
    path: PathBuf,
    file: File,
    chain: Option<u64>,
    cursor: Option<u64>,
    delivered: HashSet<String>,
    pending: BTreeMap<String, Alert>,
}

impl Store {
    /// Opens or creates the store in `dir`. A torn final line from an
    /// interrupted write is ignored.
    pub fn open(dir: &Path) -> Result<Store, WatchError> {
        let io = |source| WatchError::Store { path: dir.to_path_buf(), source };
        std::fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(STATE_FILE);
        let mut store = Store {
            file: OpenOptions::new().create(true).append(true).read(true).open(&path).map_err(io)?,
            path: path.clone(),
            chain: None,
            cursor: None,
            delivered: HashSet::new(),
            pending: BTreeMap::new(),
        };
        let text = std::fs::read_to_string(&path).map_err(io)?;
        let mut good_len = 0;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                good_len += line.len();
                continue;
            }
            let parsed = serde_json::from_str::<Record>(line);
            if i + 1 == lines.len() && (!line.ends_with('\n') || parsed.is_err()) {
                log::warn!("{}: dropping torn last line", path.display());
                break;
            }
            let r = parsed.map_err(|e| {
                io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))
            })?;
            store.apply(r);
            good_len += line.len();
        }
        if good_len < text.len() {
            store.file.set_len(good_len as u64).map_err(io)?;
        }
        Ok(store)
    }

    fn apply(&mut self, r: Record) {
        match r {
            Record::Cursor { block } => self.cursor = Some(self.cursor.map_or(block, |c| c.max(block))),
            Record::Chain { id } => self.chain = Some(id),
            Record::Delivered { key } => {
                self.pending.remove(&key);
                self.delivered.insert(key);
            }
            Record::Pending { key, alert } => {
                if !self.delivered.contains(&key) {
                    self.pending.insert(key, *alert);
                }
            }
        }
    }

    fn append(&mut self, r: Record) -> Result<(), WatchError> {
        let mut line = serde_json::to_string(&r).expect("record serialises");
        line.push('\n');
        let io = |source| WatchError::Store { path: self.path.clone(), source };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.apply(r);
        Ok(())
    }

    /// Last fully processed block.
    pub fn cursor(&self) -> Option<u64> {
        self.cursor
    }

    /// Moves the cursor forward. Going backwards is ignored.
    pub fn advance(&mut self, block: u64) -> Result<(), WatchError> {
        if self.cursor.is_some_and(|c| block <= c) {
            return Ok(());
        }
        self.append(Record::Cursor { block })
    }

    pub fn chain(&self) -> Option<u64> {
        self.chain
    }

    pub fn set_chain(&mut self, id: u64) -> Result<(), WatchError> {
        if self.chain == Some(id) {
            return Ok(());
        }
        self.append(Record::Chain { id })
    }

    pub fn is_delivered(&self, key: &str) -> bool {
        self.delivered.contains(key)
    }

    pub fn delivered_count(&self) -> usize {
        self.delivered.len()
    }

    pub fn mark_delivered(&mut self, key: &str) -> Result<(), WatchError> {
        self.append(Record::Delivered { key: key.to_string() })
    }

    pub fn is_pending(&self, key: &str) -> bool {
        self.pending.contains_key(key)
    }

    pub fn add_pending(&mut self, alert: &Alert) -> Result<(), WatchError> {
        self.append(Record::Pending { key: alert.key.to_string(), alert: Box::new(alert.clone()) })
    }

    pub fn pending(&self) -> Vec<Alert> {
        self.pending.values().cloned().collect()
    }
}
