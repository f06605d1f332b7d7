//! Response cache keyed by request digest, optionally persisted as an
//! append-only JSONL file. A corrupt line invalidates only that entry.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const CACHE_FILE: &str = "responses.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    /// Verbatim response body.
    pub response: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Default)]
pub struct ResponseCache {
    entries: Mutex<HashMap<String, String>>,
    // one lock per key so concurrent identical requests fetch once
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) the persistent cache under `dir`, loading every
    /// well-formed entry.
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let raw = fs::read(&path)?;
            needs_newline = raw.last().is_some_and(|&b| b != b'\n');
            for line in BufReader::new(raw.as_slice()).split(b'\n') {
                let line = line?;
                match serde_json::from_slice::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key, e.response);
                    }
                    Err(_) if line.is_empty() => {}
                    Err(e) => log::warn!("skipping corrupt cache line: {e}"),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if needs_newline {
            // a torn final write must not swallow the next entry
            file.write_all(b"\n")?;
        }
        Ok(Self {
            entries: Mutex::new(entries),
            inflight: Mutex::default(),
            file: Some(Mutex::new(file)),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: &str, response: &str) -> io::Result<()> {
        if let Some(file) = &self.file {
            let entry = CacheEntry {
                key: key.to_owned(),
                response: response.to_owned(),
                created_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = serde_json::to_vec(&entry)?;
            line.push(b'\n');
            let mut f = file.lock().unwrap();
            f.write_all(&line)?;
            f.flush()?;
        }
        self.entries
            .lock()
            .unwrap()
            .insert(key.to_owned(), response.to_owned());
        Ok(())
    }

    /// Return the cached body for `key`, or run `fetch` exactly once across
    /// concurrent callers and store its result. Errors are not cached.
    /// The flag is true on a cache hit.
    pub fn get_or_fetch<E: From<io::Error>>(
        &self,
        key: &str,
        fetch: impl FnOnce() -> Result<String, E>,
    ) -> Result<(String, bool), E> {
        if let Some(hit) = self.get(key) {
            return Ok((hit, true));
        }
        let slot = self
            .inflight
            .lock()
            .unwrap()
            .entry(key.to_owned())
            .or_default()
            .clone();
        let _guard = slot.lock().unwrap();
        if let Some(hit) = self.get(key) {
            return Ok((hit, true));
        }
        let body = fetch()?;
        self.insert(key, &body)?;
        Ok((body, false))
    }
}
