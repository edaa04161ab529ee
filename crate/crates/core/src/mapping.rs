//! Logical-to-physical mapping table.
//!
//! Baseline deletion mutates only this structure; the bytes it pointed at
//! stay on the medium. On flash the table also indexes superseded (stale)
//! frames so the deletion protocol can find invalid copies of a page.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::medium::{FrameId, LogicalPage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub logical_page: LogicalPage,
    pub frame_id: FrameId,
    /// Carries the trace's personal-information designation down to NVM
    /// metadata, where the deletion protocol's search can see it.
    pub personal: bool,
    pub valid: bool,
}

/// Record of a superseded frame. `retired` marks records whose frame has
/// been sanitized by the deletion protocol; they stay on the books until
/// block erase so the stale index and Stale frame states keep matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleRecord {
    pub frame_id: FrameId,
    pub logical_page: LogicalPage,
    pub personal: bool,
    pub retired: bool,
}

#[derive(Debug, Clone, Default)]
pub struct MappingTable {
    entries: BTreeMap<LogicalPage, MappingEntry>,
    stale: BTreeMap<FrameId, StaleRecord>,
}

impl MappingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Physical frame of the valid entry for `page`, if any.
    pub fn translate(&self, page: LogicalPage) -> Option<FrameId> {
        self.entries
            .get(&page)
            .filter(|e| e.valid)
            .map(|e| e.frame_id)
    }

    pub fn entry(&self, page: LogicalPage) -> Option<&MappingEntry> {
        self.entries.get(&page)
    }

    pub fn valid_entries(&self) -> impl Iterator<Item = &MappingEntry> {
        self.entries.values().filter(|e| e.valid)
    }

    pub fn insert(&mut self, page: LogicalPage, frame_id: FrameId, personal: bool) {
        self.entries.insert(
            page,
            MappingEntry {
                logical_page: page,
                frame_id,
                personal,
                valid: true,
            },
        );
    }

    /// Mark the entry for `page` invalid. Returns the old entry if it was
    /// valid. Never touches frame bytes.
    pub fn invalidate(&mut self, page: LogicalPage) -> Option<MappingEntry> {
        match self.entries.get_mut(&page) {
            Some(e) if e.valid => {
                e.valid = false;
                Some(*e)
            }
            _ => None,
        }
    }

    pub fn push_stale(&mut self, frame_id: FrameId, page: LogicalPage, personal: bool) {
        self.stale.insert(
            frame_id,
            StaleRecord {
                frame_id,
                logical_page: page,
                personal,
                retired: false,
            },
        );
    }

    /// Insert a stale record already marked retired (sanitized valid target
    /// on flash: the frame is dead until erase but holds no recoverable data).
    pub fn push_stale_retired(&mut self, frame_id: FrameId, page: LogicalPage, personal: bool) {
        self.stale.insert(
            frame_id,
            StaleRecord {
                frame_id,
                logical_page: page,
                personal,
                retired: true,
            },
        );
    }

    pub fn stale_records(&self) -> impl Iterator<Item = &StaleRecord> {
        self.stale.values()
    }

    pub fn stale_record(&self, frame_id: FrameId) -> Option<&StaleRecord> {
        self.stale.get(&frame_id)
    }

    /// Mark the stale record for a sanitized frame retired; subsequent
    /// searches skip it.
    pub fn retire_stale(&mut self, frame_id: FrameId) -> bool {
        match self.stale.get_mut(&frame_id) {
            Some(rec) => {
                rec.retired = true;
                true
            }
            None => false,
        }
    }

    /// Drop all stale records whose frame lies in `frames` (block erase).
    pub fn purge_stale_in(&mut self, frames: std::ops::Range<FrameId>) -> usize {
        let ids: Vec<FrameId> = self.stale.range(frames).map(|(&id, _)| id).collect();
        for id in &ids {
            self.stale.remove(id);
        }
        ids.len()
    }

    pub fn len_valid(&self) -> usize {
        self.valid_entries().count()
    }

    pub fn stale_len(&self) -> usize {
        self.stale.len()
    }
}
