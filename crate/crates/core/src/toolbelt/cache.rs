use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedPage {
    pub url: String,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
    pub content: String,
}

/// Write-once page store keyed by the exact url string.
#[derive(Debug, Default)]
pub struct PageCache {
    pages: RwLock<HashMap<String, CachedPage>>,
}

impl PageCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, url: &str) -> Option<String> {
        self.pages
            .read()
            .expect("page cache poisoned")
            .get(url)
            .map(|p| p.content.clone())
    }

    /// Stores `content` unless `url` is already cached. Returns the cached
    /// content, which is the earlier entry when one exists.
    pub fn insert(&self, url: &str, content: String) -> String {
        let mut pages = self.pages.write().expect("page cache poisoned");
        pages
            .entry(url.to_string())
            .or_insert_with(|| CachedPage {
                url: url.to_string(),
                fetched_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                content,
            })
            .content
            .clone()
    }

    pub fn len(&self) -> usize {
        self.pages.read().expect("page cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let decoded = jsonl::read_file::<CachedPage>(path)?;
        if let Some(e) = decoded.errors.first() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string()));
        }
        let pages = decoded.records.into_iter().map(|p| (p.url.clone(), p)).collect();
        Ok(Self { pages: RwLock::new(pages) })
    }

    /// Writes entries sorted by url.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let pages = self.pages.read().expect("page cache poisoned");
        let mut entries: Vec<&CachedPage> = pages.values().collect();
        entries.sort_by(|a, b| a.url.cmp(&b.url));
        jsonl::write_file(path, &entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_write_once() {
        let cache = PageCache::new();
        assert_eq!(cache.insert("https://a.org/x", "first".into()), "first");
        assert_eq!(cache.insert("https://a.org/x", "second".into()), "first");
        assert_eq!(cache.get("https://a.org/x").as_deref(), Some("first"));
        // No normalization: a trailing slash is a different key.
        assert_eq!(cache.get("https://a.org/x/"), None);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = PageCache::new();
        cache.insert("https://b.org", "b".into());
        cache.insert("https://a.org", "a".into());
        cache.save(&path).unwrap();
        let loaded = PageCache::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("https://a.org").as_deref(), Some("a"));
    }
}
