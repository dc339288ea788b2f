//! Persistent expansion cache.
//!
//! Records are appended one JSON object per line to `<dir>/<xx>.jsonl`,
//! where `xx` is the first two hex digits of the record key. Each record is
//! written with a single append so concurrent writers never interleave
//! within a line.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{TopicKind, TopicSet};
use crate::error::{Error, Result};
use crate::hash::FieldDigest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub kind: TopicKind,
    pub source_id: String,
    pub raw_output: String,
    pub topics: Vec<String>,
    pub model_id: String,
    pub prompt_version: String,
    pub requested: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl CacheRecord {
    pub fn new(key: String, source_id: &str, raw_output: String, set: &TopicSet) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            key,
            kind: set.kind,
            source_id: source_id.to_string(),
            raw_output,
            topics: set.topics.clone(),
            model_id: set.model_id.clone(),
            prompt_version: set.prompt_version.clone(),
            requested: set.requested,
            created_at,
        }
    }

    pub fn topic_set(&self) -> TopicSet {
        TopicSet {
            topics: self.topics.clone(),
            kind: self.kind,
            requested: self.requested,
            model_id: self.model_id.clone(),
            prompt_version: self.prompt_version.clone(),
        }
    }
}

/// SHA-256 over kind, prompt version, model id, requested count and source text.
pub fn cache_key(kind: TopicKind, prompt_version: &str, model_id: &str, requested: usize, source_text: &str) -> String {
    FieldDigest::new()
        .field(kind.as_str())
        .field(prompt_version)
        .field(model_id)
        .field(requested.to_string())
        .field(source_text)
        .hex()
}

pub struct ExpansionCache {
    dir: Option<PathBuf>,
    records: RwLock<HashMap<String, CacheRecord>>,
    shard_locks: Vec<Mutex<()>>,
}

impl ExpansionCache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            records: RwLock::new(HashMap::new()),
            shard_locks: (0..256).map(|_| Mutex::new(())).collect(),
        }
    }

    /// Opens (creating if needed) a cache directory and loads every shard.
    /// Unparsable lines, such as a torn final write, are skipped.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = HashMap::new();
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if !content.is_empty() && !content.ends_with('\n') {
                // terminate a torn final line so later appends start cleanly
                OpenOptions::new()
                    .append(true)
                    .open(&path)
                    .and_then(|mut f| f.write_all(b"\n"))
                    .map_err(|e| Error::io(&path, e))?;
            }
            for (i, line) in content.lines().enumerate() {
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(rec) => {
                        records.insert(rec.key.clone(), rec);
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), i + 1),
                }
            }
        }
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            records: RwLock::new(records),
            shard_locks: (0..256).map(|_| Mutex::new(())).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.records.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, record: CacheRecord) -> Result<()> {
        if let Some(dir) = &self.dir {
            let shard = u8::from_str_radix(&record.key[..2], 16).unwrap_or(0);
            let path = dir.join(format!("{:02x}.jsonl", shard));
            let mut line = serde_json::to_string(&record).expect("cache record serializes");
            line.push('\n');
            let _guard = self.shard_locks[shard as usize].lock().unwrap();
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        self.records.write().unwrap().insert(record.key.clone(), record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(key: &str) -> CacheRecord {
        let set = TopicSet {
            topics: vec!["a".into()],
            kind: TopicKind::Tde,
            requested: 1,
            model_id: "m".into(),
            prompt_version: "tde-v1".into(),
        };
        CacheRecord::new(key.to_string(), "d1", "1. a".into(), &set)
    }

    #[test]
    fn key_depends_on_every_component() {
        let base = cache_key(TopicKind::Tqe, "tqe-v1", "m", 5, "text");
        assert_eq!(base.len(), 64);
        assert_eq!(base, cache_key(TopicKind::Tqe, "tqe-v1", "m", 5, "text"));
        for other in [
            cache_key(TopicKind::Tde, "tqe-v1", "m", 5, "text"),
            cache_key(TopicKind::Tqe, "tqe-v2", "m", 5, "text"),
            cache_key(TopicKind::Tqe, "tqe-v1", "n", 5, "text"),
            cache_key(TopicKind::Tqe, "tqe-v1", "m", 4, "text"),
            cache_key(TopicKind::Tqe, "tqe-v1", "m", 5, "texts"),
        ] {
            assert_ne!(base, other);
        }
    }

    #[test]
    fn persisted_records_reload_and_torn_lines_skip() {
        let dir = tempfile::tempdir().unwrap();
        let key = cache_key(TopicKind::Tde, "tde-v1", "m", 1, "x");
        {
            let cache = ExpansionCache::open(dir.path()).unwrap();
            cache.put(record(&key)).unwrap();
        }
        let shard = dir.path().join(format!("{}.jsonl", &key[..2]));
        let mut f = OpenOptions::new().append(true).open(&shard).unwrap();
        f.write_all(b"{\"key\":\"trunc").unwrap();
        let cache = ExpansionCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get(&key).unwrap().topics, ["a"]);
        let key2 = format!("{}{}", &key[..2], "0".repeat(62));
        cache.put(record(&key2)).unwrap();
        assert_eq!(ExpansionCache::open(dir.path()).unwrap().len(), 2);
    }
}
