//! Content-addressed reply cache.
//!
//! Keys are hex SHA-256 digests of the request (see [`request_key`]). Entries
//! live in memory and, when a directory is configured, as one file per key
//! under `<dir>/<first two hex chars>/<key>`. File writes go through a
//! temporary file and a rename, so a reader never sees a partial entry.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use sha2::{Digest, Sha256};

use super::LlmError;

/// Hash of a chat request: model name and fully rendered prompt.
pub fn request_key(model: &str, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LlmError::Io(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache { dir: Some(dir), memory: RwLock::default() })
    }

    fn path(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2.min(key.len())]).join(key)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.memory.read().expect("cache lock").get(key) {
            return Some(hit.clone());
        }
        let dir = self.dir.as_ref()?;
        let value = fs::read_to_string(Self::path(dir, key)).ok()?;
        self.memory.write().expect("cache lock").insert(key.to_string(), value.clone());
        Some(value)
    }

    pub fn put(&self, key: &str, value: &str) -> Result<(), LlmError> {
        if let Some(dir) = &self.dir {
            let path = Self::path(dir, key);
            let parent = path.parent().expect("cache path has a parent");
            let io = |e: std::io::Error| LlmError::Io(format!("{}: {e}", path.display()));
            fs::create_dir_all(parent).map_err(io)?;
            let tmp = parent.join(format!(".{key}.{}.tmp", std::process::id()));
            let mut file = fs::File::create(&tmp).map_err(io)?;
            file.write_all(value.as_bytes()).map_err(io)?;
            file.sync_all().map_err(io)?;
            fs::rename(&tmp, &path).map_err(io)?;
        }
        self.memory.write().expect("cache lock").insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_model_and_prompt() {
        let a = request_key("m1", "p");
        assert_eq!(a.len(), 64);
        assert_eq!(a, request_key("m1", "p"));
        assert_ne!(a, request_key("m2", "p"));
        assert_ne!(request_key("ab", "c"), request_key("a", "bc"));
    }

    #[test]
    fn disk_entries_survive_a_new_cache() {
        let dir = tempfile::tempdir().unwrap();
        let key = request_key("m", "hello");
        {
            let cache = ResponseCache::on_disk(dir.path()).unwrap();
            assert!(cache.get(&key).is_none());
            cache.put(&key, "reply ✓").unwrap();
        }
        let fresh = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(fresh.get(&key).as_deref(), Some("reply ✓"));
    }
}
