//! Write-back DRAM cache in front of the NVM device.
//!
//! Dirty entries flush to NVM once they have sat unused for the configured
//! idle timeout (inclusive boundary: idleness >= timeout flushes). Eviction
//! is LRU with ties broken by lowest logical page. Time is logical ticks
//! supplied by the caller; nothing here reads a clock.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceError, NvmDevice};
use crate::medium::LogicalPage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub logical_page: LogicalPage,
    pub data: Vec<u8>,
    pub dirty: bool,
    pub personal: bool,
    pub last_access: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionPolicy {
    Lru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity: usize,
    pub idle_timeout: u64,
    #[serde(default = "default_eviction")]
    pub eviction: EvictionPolicy,
}

fn default_eviction() -> EvictionPolicy {
    EvictionPolicy::Lru
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if self.capacity == 0 || self.idle_timeout == 0 {
            return Err(CacheError::BadConfig);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CacheError {
    #[error("capacity and idle_timeout must be at least 1")]
    BadConfig,
    #[error("data length {got} does not match page size {want}")]
    BadLength { got: usize, want: usize },
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Where the bytes of a read came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadSource {
    Hit,
    MissFilled,
    /// Page is neither cached nor mapped; a zero page is returned.
    Unbacked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadOutcome {
    pub data: Vec<u8>,
    pub source: ReadSource,
}

#[derive(Debug, Clone)]
pub struct DramCache {
    config: CacheConfig,
    entries: BTreeMap<LogicalPage, CacheEntry>,
}

impl DramCache {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(Self {
            config,
            entries: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, page: LogicalPage) -> Option<&CacheEntry> {
        self.entries.get(&page)
    }

    /// CPU write: insert or update the entry, dirty, stamped `now`. A full
    /// cache evicts the LRU entry first; a dirty evictee is flushed to NVM
    /// with its personal tag.
    pub fn access_write(
        &mut self,
        device: &mut NvmDevice,
        page: LogicalPage,
        data: &[u8],
        personal: bool,
        now: u64,
    ) -> Result<(), CacheError> {
        let want = device.geometry().page_size;
        if data.len() != want {
            return Err(CacheError::BadLength {
                got: data.len(),
                want,
            });
        }
        if !self.entries.contains_key(&page) {
            self.make_room(device)?;
        }
        self.entries.insert(
            page,
            CacheEntry {
                logical_page: page,
                data: data.to_vec(),
                dirty: true,
                personal,
                last_access: now,
            },
        );
        Ok(())
    }

    /// CPU read: cache hit refreshes recency; a miss on a mapped page loads
    /// from NVM and caches clean; an unmapped miss returns a zero page
    /// without caching it.
    pub fn access_read(
        &mut self,
        device: &mut NvmDevice,
        page: LogicalPage,
        now: u64,
    ) -> Result<ReadOutcome, CacheError> {
        if let Some(entry) = self.entries.get_mut(&page) {
            entry.last_access = now;
            return Ok(ReadOutcome {
                data: entry.data.clone(),
                source: ReadSource::Hit,
            });
        }
        match device.read_page(page) {
            Some(data) => {
                self.make_room(device)?;
                self.entries.insert(
                    page,
                    CacheEntry {
                        logical_page: page,
                        data: data.clone(),
                        dirty: false,
                        personal: device
                            .table()
                            .entry(page)
                            .map(|e| e.personal)
                            .unwrap_or(false),
                        last_access: now,
                    },
                );
                Ok(ReadOutcome {
                    data,
                    source: ReadSource::MissFilled,
                })
            }
            None => Ok(ReadOutcome {
                data: vec![0u8; device.geometry().page_size],
                source: ReadSource::Unbacked,
            }),
        }
    }

    /// Flush every dirty entry idle for at least the configured timeout.
    /// Returns the flushed pages in ascending order.
    pub fn tick_flush(
        &mut self,
        device: &mut NvmDevice,
        now: u64,
    ) -> Result<Vec<LogicalPage>, CacheError> {
        let due: Vec<LogicalPage> = self
            .entries
            .values()
            .filter(|e| e.dirty && now.saturating_sub(e.last_access) >= self.config.idle_timeout)
            .map(|e| e.logical_page)
            .collect();
        for &page in &due {
            self.flush_one(device, page)?;
        }
        Ok(due)
    }

    /// Flush every dirty entry regardless of idleness (end of run).
    pub fn flush_all(&mut self, device: &mut NvmDevice) -> Result<Vec<LogicalPage>, CacheError> {
        let due: Vec<LogicalPage> = self
            .entries
            .values()
            .filter(|e| e.dirty)
            .map(|e| e.logical_page)
            .collect();
        for &page in &due {
            self.flush_one(device, page)?;
        }
        Ok(due)
    }

    /// Drop the entry for `page`, if cached, without flushing. Deletion
    /// requests use this: data being deleted must not be written back.
    pub fn discard(&mut self, page: LogicalPage) -> Option<CacheEntry> {
        self.entries.remove(&page)
    }

    /// Pages of all currently cached entries matching a predicate.
    pub fn pages_where(&self, pred: impl Fn(&CacheEntry) -> bool) -> Vec<LogicalPage> {
        self.entries
            .values()
            .filter(|e| pred(e))
            .map(|e| e.logical_page)
            .collect()
    }

    /// Earliest tick at which some dirty entry becomes due, if any.
    pub fn next_flush_due(&self) -> Option<u64> {
        self.entries
            .values()
            .filter(|e| e.dirty)
            .map(|e| e.last_access + self.config.idle_timeout)
            .min()
    }

    fn flush_one(&mut self, device: &mut NvmDevice, page: LogicalPage) -> Result<(), CacheError> {
        let entry = self.entries.get_mut(&page).expect("flush target cached");
        device.write_page(page, &entry.data, entry.personal)?;
        entry.dirty = false;
        Ok(())
    }

    /// Evict the LRU entry if the cache is at capacity, flushing it first
    /// when dirty. Clean victims leave without any NVM traffic.
    fn make_room(&mut self, device: &mut NvmDevice) -> Result<(), CacheError> {
        if self.entries.len() < self.config.capacity {
            return Ok(());
        }
        let EvictionPolicy::Lru = self.config.eviction;
        let victim = self
            .entries
            .values()
            .min_by_key(|e| (e.last_access, e.logical_page))
            .map(|e| e.logical_page)
            .expect("cache at capacity is non-empty");
        if self.entries[&victim].dirty {
            self.flush_one(device, victim)?;
        }
        self.entries.remove(&victim);
        Ok(())
    }
}
