//! Append-only record log per key, with compare-and-set updates and
//! periodic compaction.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record {0} not found")]
    NotFound(String),
    #[error("record {0} already exists")]
    Exists(String),
    #[error("stale revision for {id}: expected {expected}, current {current}")]
    Conflict { id: String, expected: u64, current: u64 },
    #[error("invalid record id {0:?}")]
    InvalidId(String),
    #[error("corrupt log {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct LogLine<T> {
    revision: u64,
    record: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Versioned<T> {
    pub revision: u64,
    pub record: T,
}

struct Slot<T> {
    current: Versioned<T>,
    log_lines: usize,
}

/// Records live in `dir/<id>.log`, one JSON line per revision. The newest
/// line wins on open; a torn final line from a crash is ignored.
pub struct RecordStore<T> {
    dir: PathBuf,
    compact_after: usize,
    slots: Mutex<BTreeMap<String, Slot<T>>>,
    _marker: PhantomData<fn() -> T>,
}

pub const DEFAULT_COMPACT_AFTER: usize = 64;

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Replaces a log with its newest line (write to temp, then rename).
fn rewrite<T: Serialize>(dir: &Path, id: &str, current: &Versioned<T>) -> Result<(), StoreError> {
    let path = dir.join(format!("{id}.log"));
    let tmp = dir.join(format!("{id}.log.tmp"));
    let mut line = serde_json::to_string(&LogLine {
        revision: current.revision,
        record: &current.record,
    })
    .expect("record serializes");
    line.push('\n');
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(line.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

impl<T: Clone + Serialize + DeserializeOwned> RecordStore<T> {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::open_with(dir, DEFAULT_COMPACT_AFTER)
    }

    /// `compact_after`: rewrite a log once it holds this many lines.
    pub fn open_with(dir: impl Into<PathBuf>, compact_after: usize) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut slots = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_some_and(|e| e == "tmp") {
                let _ = fs::remove_file(&path);
                continue;
            }
            if path.extension().is_none_or(|e| e != "log") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_id(s)) else {
                continue;
            };
            if let Some((slot, torn)) = Self::replay(&path)? {
                if torn {
                    rewrite(&dir, id, &slot.current)?;
                }
                slots.insert(id.to_string(), Slot { log_lines: if torn { 1 } else { slot.log_lines }, ..slot });
            }
        }
        Ok(Self {
            dir,
            compact_after: compact_after.max(2),
            slots: Mutex::new(slots),
            _marker: PhantomData,
        })
    }

    /// Newest record of a log, and whether a torn final line was dropped.
    fn replay(path: &Path) -> Result<Option<(Slot<T>, bool)>, StoreError> {
        let file = File::open(path).map_err(io_err(path))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err(path))?;
        let mut current: Option<Versioned<T>> = None;
        let mut count = 0;
        let mut torn = false;
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        for (k, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine<T> = match serde_json::from_str(line) {
                Ok(p) => p,
                Err(_) if Some(k) == last => {
                    torn = true;
                    break;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        message: format!("line {}: {e}", k + 1),
                    })
                }
            };
            if let Some(c) = &current {
                if parsed.revision <= c.revision {
                    return Err(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        message: format!("revision {} follows {}", parsed.revision, c.revision),
                    });
                }
            }
            current = Some(Versioned {
                revision: parsed.revision,
                record: parsed.record,
            });
            count += 1;
        }
        Ok(current.map(|current| {
            (
                Slot {
                    current,
                    log_lines: count,
                },
                torn,
            )
        }))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.log"))
    }

    fn append(&self, id: &str, revision: u64, record: &T) -> Result<(), StoreError> {
        let path = self.log_path(id);
        let mut line = serde_json::to_string(&LogLine { revision, record }).expect("record serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    pub fn get(&self, id: &str) -> Option<Versioned<T>> {
        self.slots.lock().unwrap().get(id).map(|s| s.current.clone())
    }

    /// All records ordered by id.
    pub fn list(&self) -> Vec<(String, Versioned<T>)> {
        self.slots
            .lock()
            .unwrap()
            .iter()
            .map(|(k, s)| (k.clone(), s.current.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a new record at revision 1.
    pub fn insert(&self, id: &str, record: T) -> Result<u64, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        let mut slots = self.slots.lock().unwrap();
        if slots.contains_key(id) {
            return Err(StoreError::Exists(id.to_string()));
        }
        self.append(id, 1, &record)?;
        slots.insert(
            id.to_string(),
            Slot {
                current: Versioned { revision: 1, record },
                log_lines: 1,
            },
        );
        Ok(1)
    }

    /// Replaces the record only if its revision is still `expected`; returns
    /// the new revision.
    pub fn put(&self, id: &str, record: T, expected: u64) -> Result<u64, StoreError> {
        let mut slots = self.slots.lock().unwrap();
        let slot = slots.get_mut(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if slot.current.revision != expected {
            return Err(StoreError::Conflict {
                id: id.to_string(),
                expected,
                current: slot.current.revision,
            });
        }
        let revision = expected + 1;
        self.append(id, revision, &record)?;
        slot.current = Versioned { revision, record };
        slot.log_lines += 1;
        if slot.log_lines >= self.compact_after {
            rewrite(&self.dir, id, &slot.current)?;
            slot.log_lines = 1;
        }
        Ok(revision)
    }

    /// Rewrites every log down to its newest line.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut slots = self.slots.lock().unwrap();
        for (id, slot) in slots.iter_mut() {
            if slot.log_lines > 1 {
                rewrite(&self.dir, id, &slot.current)?;
                slot.log_lines = 1;
            }
        }
        Ok(())
    }
}
