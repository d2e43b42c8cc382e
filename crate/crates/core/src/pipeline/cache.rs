//! Content-addressed cell cache: one small JSON file per key, written via
//! temp-file-and-rename so concurrent writers never expose partial entries.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub package_id: String,
    pub package_dir: PathBuf,
    pub trace_id: String,
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

static TMP: AtomicU64 = AtomicU64::new(0);

impl Cache {
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// The entry for `key`; unreadable or mismatched files count as misses.
    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.key == key).then_some(entry)
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), PipelineError> {
        let target = self.path(&entry.key);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            entry.key,
            std::process::id(),
            TMP.fetch_add(1, Ordering::Relaxed)
        ));
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        fs::write(&tmp, body).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            PipelineError::io(&target, e)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(&dir.path().join("c")).unwrap();
        assert!(cache.get("k1").is_none());
        let e = CacheEntry {
            key: "k1".into(),
            package_id: "p".into(),
            package_dir: "/x".into(),
            trace_id: "t".into(),
        };
        cache.put(&e).unwrap();
        assert_eq!(cache.get("k1"), Some(e));
        fs::write(cache.path("k2"), "{not json").unwrap();
        assert!(cache.get("k2").is_none());
    }
}
