use std::collections::BTreeMap;

use super::Labels;
use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub activations: Tensor,
    pub labels: Labels,
    pub version: u64,
}

/// Server-side store of each client's one-off cut-layer activations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServerCache {
    entries: BTreeMap<u32, CacheEntry>,
}

impl ServerCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores or replaces the entry for `client_id`, returning its new version.
    pub fn put(&mut self, client_id: u32, activations: Tensor, labels: Labels) -> Result<u64> {
        if let Some(v) = labels.values() {
            if v.len() != activations.rows() {
                return Err(Error::Shape(format!(
                    "cache entry with {} labels for {} rows",
                    v.len(),
                    activations.rows()
                )));
            }
        }
        let version = self.entries.get(&client_id).map_or(1, |e| e.version + 1);
        self.entries.insert(client_id, CacheEntry { activations, labels, version });
        Ok(version)
    }

    pub fn get(&self, client_id: u32) -> Option<&CacheEntry> {
        self.entries.get(&client_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in client-id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &CacheEntry)> {
        self.entries.iter().map(|(&k, e)| (k, e))
    }

    pub fn versions(&self) -> BTreeMap<u32, u64> {
        self.entries.iter().map(|(&k, e)| (k, e.version)).collect()
    }

    pub fn total_rows(&self) -> usize {
        self.entries.values().map(|e| e.activations.rows()).sum()
    }
}
