//! Prediction cache keyed by (adapter fingerprint, input hash).
//!
//! With a directory attached, each fingerprint gets its own append-only
//! `<dir>/<sha256(fingerprint)[..16]>.jsonl`, one `{fingerprint, input,
//! prediction}` record per line. Files are read back on open.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::expect::{Prediction, Task};

/// SHA-256 over the task and the length-prefixed texts, hex encoded.
pub fn input_hash(task: Task, texts: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(match task {
        Task::Classification => b"classification".as_slice(),
        Task::Span => b"span".as_slice(),
    });
    h.update((texts.len() as u64).to_le_bytes());
    for t in texts {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    hex::encode(h.finalize())
}

fn file_stem(fingerprint: &str) -> String {
    hex::encode(Sha256::digest(fingerprint.as_bytes()))[..16].to_string()
}

#[derive(Serialize, Deserialize)]
struct Record {
    fingerprint: String,
    input: String,
    prediction: Prediction,
}

#[derive(Debug, Default)]
pub struct PredictionCache {
    map: RwLock<HashMap<(String, String), Prediction>>,
    dir: Option<PathBuf>,
    writer: Mutex<HashMap<String, File>>,
}

impl PredictionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a persistent cache directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ModelError> {
        let dir = dir.as_ref().to_path_buf();
        let err = |e: std::io::Error| ModelError::Cache(format!("{}: {e}", dir.display()));
        fs::create_dir_all(&dir).map_err(err)?;
        let mut map = HashMap::new();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let src = fs::read_to_string(&path).map_err(err)?;
            // a torn final line from an interrupted run is skipped
            for line in src.lines() {
                if let Ok(r) = serde_json::from_str::<Record>(line) {
                    map.insert((r.fingerprint, r.input), r.prediction);
                }
            }
        }
        Ok(Self { map: RwLock::new(map), dir: Some(dir), writer: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str, input: &str) -> Option<Prediction> {
        self.map.read().expect("cache lock").get(&(fingerprint.to_string(), input.to_string())).cloned()
    }

    pub fn put(&self, fingerprint: &str, input: &str, prediction: &Prediction) -> Result<(), ModelError> {
        let key = (fingerprint.to_string(), input.to_string());
        {
            let mut map = self.map.write().expect("cache lock");
            if map.contains_key(&key) {
                return Ok(());
            }
            map.insert(key, prediction.clone());
        }
        let Some(dir) = &self.dir else { return Ok(()) };
        let rec =
            Record { fingerprint: fingerprint.to_string(), input: input.to_string(), prediction: prediction.clone() };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let mut files = self.writer.lock().expect("writer lock");
        let stem = file_stem(fingerprint);
        let file = match files.entry(stem) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let path = dir.join(format!("{}.jsonl", e.key()));
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|err| ModelError::Cache(format!("{}: {err}", path.display())))?;
                e.insert(f)
            }
        };
        file.write_all(line.as_bytes()).map_err(|e| ModelError::Cache(e.to_string()))
    }
}
