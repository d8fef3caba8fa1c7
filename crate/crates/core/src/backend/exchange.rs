//! Persisted prompt/response records and the append-only JSON Lines log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendConfig, BackendError, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub exchange_id: String,
    pub prompt: String,
    pub response: String,
    pub model_id: String,
    pub timestamp: DateTime<Utc>,
    /// Seconds.
    pub latency: f64,
    pub attempt_count: u32,
}

#[derive(Serialize)]
struct IdInput<'a> {
    model_id: &'a str,
    temperature: f64,
    max_output_tokens: u32,
    prompt: &'a str,
}

/// Hex SHA-256 over the model, decoding parameters and prompt.
pub fn exchange_id(
    model_id: &str,
    temperature: f64,
    max_output_tokens: u32,
    prompt: &str,
) -> String {
    let canonical = serde_json::to_vec(&IdInput {
        model_id,
        temperature,
        max_output_tokens,
        prompt,
    })
    .expect("plain struct serializes");
    hex::encode(Sha256::digest(canonical))
}

/// Exchange log backed by a JSON Lines file. Writes are serialized; lookups
/// go through an in-memory index.
pub struct ExchangeStore {
    path: PathBuf,
    index: RwLock<HashMap<String, Exchange>>,
    writer: Mutex<Option<File>>,
}

impl ExchangeStore {
    /// Opens (creating if absent) a log for reading and appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|e| store_err(&path, e))?;
        let (index, torn_tail) = load(&path, &mut file)?;
        // Drop a line left half-written by an interrupted append.
        if let Some(offset) = torn_tail {
            file.set_len(offset).map_err(|e| store_err(&path, e))?;
        }
        let len = file.metadata().map_err(|e| store_err(&path, e))?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::End(-1))
                .map_err(|e| store_err(&path, e))?;
            file.read_exact(&mut last)
                .map_err(|e| store_err(&path, e))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(|e| store_err(&path, e))?;
            }
        }
        Ok(ExchangeStore {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(Some(file)),
        })
    }

    /// Opens an existing log without write access.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| store_err(&path, e))?;
        let (index, _) = load(&path, &mut file)?;
        Ok(ExchangeStore {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, exchange_id: &str) -> Option<Exchange> {
        self.index
            .read()
            .expect("exchange index poisoned")
            .get(exchange_id)
            .cloned()
    }

    pub fn contains(&self, exchange_id: &str) -> bool {
        self.index
            .read()
            .expect("exchange index poisoned")
            .contains_key(exchange_id)
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("exchange index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one exchange. An id already present is left untouched.
    pub fn append(&self, exchange: &Exchange) -> Result<(), BackendError> {
        let mut writer = self.writer.lock().expect("exchange writer poisoned");
        let Some(file) = writer.as_mut() else {
            return Err(BackendError::Store {
                path: self.path.display().to_string(),
                message: "log opened read-only".into(),
            });
        };
        if self.contains(&exchange.exchange_id) {
            return Ok(());
        }
        let mut line = serde_json::to_vec(exchange).expect("exchange serializes");
        line.push(b'\n');
        file.write_all(&line)
            .map_err(|e| store_err(&self.path, e))?;
        file.flush().map_err(|e| store_err(&self.path, e))?;
        self.index
            .write()
            .expect("exchange index poisoned")
            .insert(exchange.exchange_id.clone(), exchange.clone());
        Ok(())
    }
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Returns the index and, when the final line is unreadable, its byte offset.
fn load(
    path: &Path,
    file: &mut File,
) -> Result<(HashMap<String, Exchange>, Option<u64>), BackendError> {
    file.seek(SeekFrom::Start(0))
        .map_err(|e| store_err(path, e))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(|e| store_err(path, e))?;

    let mut index = HashMap::new();
    let mut offset = 0usize;
    let mut lines = raw.split_inclusive(|b| *b == b'\n').enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let start = offset;
        offset += line.len();
        let text = String::from_utf8_lossy(line);
        if text.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Exchange>(text.trim_end()) {
            Ok(ex) => {
                index.entry(ex.exchange_id.clone()).or_insert(ex);
            }
            Err(e) if lines.peek().is_none() => {
                log::warn!("{}: dropping torn final line ({e})", path.display());
                return Ok((index, Some(start as u64)));
            }
            Err(e) => return Err(store_err(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok((index, None))
}

/// Looks a request up in the log without touching any provider.
pub fn replay(
    store: &ExchangeStore,
    request: &CompletionRequest,
    config: &BackendConfig,
) -> Result<Exchange, BackendError> {
    let id = exchange_id(
        &config.model_id,
        config.temperature,
        request.max_output_tokens,
        &request.prompt,
    );
    store
        .get(&id)
        .ok_or(BackendError::ReplayMiss { exchange_id: id })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, response: &str) -> Exchange {
        Exchange {
            exchange_id: id.into(),
            prompt: "p".into(),
            response: response.into(),
            model_id: "m".into(),
            timestamp: DateTime::parse_from_rfc3339("2024-05-01T12:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
            latency: 0.25,
            attempt_count: 1,
        }
    }

    #[test]
    fn id_depends_on_every_input() {
        let base = exchange_id("m", 0.0, 512, "p");
        assert_eq!(base, exchange_id("m", 0.0, 512, "p"));
        assert_eq!(base.len(), 64);
        assert_ne!(base, exchange_id("m2", 0.0, 512, "p"));
        assert_ne!(base, exchange_id("m", 0.5, 512, "p"));
        assert_ne!(base, exchange_id("m", 0.0, 1024, "p"));
        assert_ne!(base, exchange_id("m", 0.0, 512, "p "));
    }

    #[test]
    fn line_format() {
        let line = serde_json::to_string(&sample("abc", "1")).unwrap();
        assert_eq!(
            line,
            r#"{"exchange_id":"abc","prompt":"p","response":"1","model_id":"m","timestamp":"2024-05-01T12:00:00Z","latency":0.25,"attempt_count":1}"#
        );
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        {
            let store = ExchangeStore::open(&path).unwrap();
            store.append(&sample("a", "1")).unwrap();
            store.append(&sample("b", "2")).unwrap();
            store.append(&sample("a", "ignored")).unwrap();
            assert_eq!(store.len(), 2);
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let store = ExchangeStore::open_read_only(&path).unwrap();
        assert_eq!(store.get("a").unwrap().response, "1");
        assert!(store.append(&sample("c", "3")).is_err());
    }

    #[test]
    fn truncated_tail_is_dropped_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        let mut text = serde_json::to_string(&sample("a", "1")).unwrap();
        text.push('\n');
        text.push_str(r#"{"exchange_id":"b","prom"#);
        std::fs::write(&path, &text).unwrap();

        let store = ExchangeStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        store.append(&sample("c", "3")).unwrap();
        drop(store);
        let store = ExchangeStore::open(&path).unwrap();
        assert!(store.contains("a") && store.contains("c"));
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        let good = serde_json::to_string(&sample("a", "1")).unwrap();
        std::fs::write(&path, format!("not json\n{good}\n")).unwrap();
        assert!(matches!(
            ExchangeStore::open(&path),
            Err(BackendError::Store { .. })
        ));
    }

    #[test]
    fn replay_hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let store = ExchangeStore::open(dir.path().join("ex.jsonl")).unwrap();
        let config = BackendConfig {
            model_id: "m".into(),
            ..Default::default()
        };
        let req = CompletionRequest::new("prompt", 512);
        let id = exchange_id("m", 0.0, 512, "prompt");
        match replay(&store, &req, &config) {
            Err(BackendError::ReplayMiss { exchange_id }) => assert_eq!(exchange_id, id),
            other => panic!("unexpected {other:?}"),
        }
        let mut ex = sample(&id, "5");
        ex.prompt = "prompt".into();
        store.append(&ex).unwrap();
        assert_eq!(replay(&store, &req, &config).unwrap(), ex);
    }
}
