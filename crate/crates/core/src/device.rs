//! Device-level NVM behavior for the two media kinds.
//!
//! Over-writable media (3D-Xpoint-like) accept arbitrary in-place writes, so
//! sanitization overwrites a frame with random data directly. Flash-like
//! media program bits one way (1 to 0): updates go out-of-place and leave a
//! stale copy behind, the cheap in-place sanitize primitive is a bit-clearing
//! zero fill, and the complete path is a whole-block erase.
//!
//! Cost charging rules (one mapping update per logical table transaction):
//! - full-page program or in-place write: 1 page write
//! - partial overwrite/clear: its span length in partial bytes
//! - first-time map, out-of-place remap, baseline delete, GC relocation
//!   remap: 1 mapping update each; in-place rewrite charges none
//! - block erase: 1 block erase, plus 1 page read + 1 page write + 1 mapping
//!   update per relocated page; stale-index purge rides along for free

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostLedger, CostParams, OpClass};
use crate::mapping::{MappingEntry, MappingTable};
use crate::medium::{
    AllocPolicy, BlockId, FrameId, FrameState, LogicalPage, Medium, MediumError, MediumGeometry,
    NvmKind,
};
use crate::rng::{generate_random_data, RandomSource, RngError, SplitMix64};

/// Exact fraction in (0, 1) for partial overwrite degrees. Span arithmetic
/// stays in integers so results are identical everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u32,
    pub den: u32,
}

impl Fraction {
    pub fn new(num: u32, den: u32) -> Result<Self, DeviceError> {
        if num == 0 || den == 0 || num >= den {
            return Err(DeviceError::BadFraction { num, den });
        }
        Ok(Self { num, den })
    }

    /// ceil(self * len) in integer arithmetic.
    pub fn ceil_of(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        let num = self.num as u128;
        let den = self.den as u128;
        (num * len as u128).div_ceil(den) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialLayout {
    /// One contiguous leading span. Maximizes the untouched residue run,
    /// the worst case for privacy.
    Prefix,
    /// The page is split into k equal-as-possible contiguous chunks and the
    /// leading share of each chunk is replaced.
    Stripes(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OverwriteMode {
    Full,
    Partial {
        fraction: Fraction,
        layout: PartialLayout,
    },
}

impl OverwriteMode {
    pub fn validate(&self) -> Result<(), DeviceError> {
        match self {
            OverwriteMode::Full => Ok(()),
            OverwriteMode::Partial { fraction, layout } => {
                Fraction::new(fraction.num, fraction.den)?;
                if let PartialLayout::Stripes(0) = layout {
                    return Err(DeviceError::BadStripeCount);
                }
                Ok(())
            }
        }
    }
}

/// Byte spans (offset, len) a mode touches on a page of `page_size` bytes.
pub fn overwrite_spans(mode: &OverwriteMode, page_size: usize) -> Vec<(usize, usize)> {
    match mode {
        OverwriteMode::Full => vec![(0, page_size)],
        OverwriteMode::Partial { fraction, layout } => match layout {
            PartialLayout::Prefix => {
                let n = fraction.ceil_of(page_size);
                if n == 0 {
                    vec![]
                } else {
                    vec![(0, n)]
                }
            }
            PartialLayout::Stripes(k) => {
                let k = *k as usize;
                if k == 0 {
                    return vec![];
                }
                let base = page_size / k;
                let rem = page_size % k;
                let mut spans = Vec::new();
                let mut offset = 0;
                for i in 0..k {
                    let chunk = base + usize::from(i < rem);
                    let n = fraction.ceil_of(chunk);
                    if n > 0 {
                        spans.push((offset, n));
                    }
                    offset += chunk;
                }
                spans
            }
        },
    }
}

/// Total bytes a mode touches.
pub fn overwrite_span_bytes(mode: &OverwriteMode, page_size: usize) -> usize {
    overwrite_spans(mode, page_size).iter().map(|s| s.1).sum()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error(transparent)]
    Rng(#[from] RngError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("operation not available on {actual:?} medium")]
    WrongKind { actual: NvmKind },
    #[error("logical page {0} has no valid mapping")]
    NotMapped(LogicalPage),
    #[error("block {0} out of range")]
    BadBlock(BlockId),
    #[error("no frame outside block {0} available for relocation")]
    NoSpareBlock(BlockId),
    #[error("partial fraction {num}/{den} must lie strictly between 0 and 1")]
    BadFraction { num: u32, den: u32 },
    #[error("stripe count must be at least 1")]
    BadStripeCount,
    #[error("verify window {window} must lie in 1..={page_size}")]
    BadVerifyWindow { window: usize, page_size: usize },
    #[error("deletion protocol failed: {0}")]
    ProtocolFailed(String),
}

/// One NVM device: medium, mapping table, and cost ledger.
#[derive(Debug, Clone)]
pub struct NvmDevice {
    medium: Medium,
    table: MappingTable,
    ledger: CostLedger,
    alloc_policy: AllocPolicy,
}

impl NvmDevice {
    pub fn new(
        geometry: MediumGeometry,
        kind: NvmKind,
        params: CostParams,
    ) -> Result<Self, DeviceError> {
        params.validate()?;
        Ok(Self {
            medium: Medium::new(geometry, kind)?,
            table: MappingTable::new(),
            ledger: CostLedger::new(params, kind, geometry.page_size),
            alloc_policy: AllocPolicy::FirstFree,
        })
    }

    pub fn with_alloc_policy(mut self, policy: AllocPolicy) -> Self {
        self.alloc_policy = policy;
        self
    }

    pub fn kind(&self) -> NvmKind {
        self.medium.kind()
    }

    pub fn geometry(&self) -> &MediumGeometry {
        self.medium.geometry()
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn table(&self) -> &MappingTable {
        &self.table
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn charge(&mut self, class: OpClass, amount: u64) -> Result<(), DeviceError> {
        self.ledger.charge(class, amount)?;
        Ok(())
    }

    pub fn translate(&self, page: LogicalPage) -> Option<FrameId> {
        self.table.translate(page)
    }

    /// Read the current contents of a mapped page. Charges one page read on
    /// a hit; an unmapped page is a normal absent outcome.
    pub fn read_page(&mut self, page: LogicalPage) -> Option<Vec<u8>> {
        let frame = self.table.translate(page)?;
        self.ledger
            .charge(OpClass::PageReads, 1)
            .expect("page reads exist on every kind");
        Some(
            self.medium
                .frame_bytes(frame)
                .expect("mapped frame in range")
                .to_vec(),
        )
    }

    /// Read raw frame bytes, charging one page read. Used by verification.
    pub fn read_frame(&mut self, frame: FrameId) -> Result<Vec<u8>, DeviceError> {
        let bytes = self.medium.frame_bytes(frame)?.to_vec();
        self.ledger.charge(OpClass::PageReads, 1)?;
        Ok(bytes)
    }

    /// Store a page, dispatching on medium kind: in place when the medium
    /// allows it, out of place on flash.
    pub fn write_page(
        &mut self,
        page: LogicalPage,
        data: &[u8],
        personal: bool,
    ) -> Result<FrameId, DeviceError> {
        match self.kind() {
            NvmKind::Overwritable => self.write_in_place(page, data, personal),
            NvmKind::FlashLike => self.write_out_of_place(page, data, personal),
        }
    }

    fn write_in_place(
        &mut self,
        page: LogicalPage,
        data: &[u8],
        personal: bool,
    ) -> Result<FrameId, DeviceError> {
        self.check_page_len(data)?;
        if let Some(frame) = self.table.translate(page) {
            self.medium.write_bytes(frame, data)?;
            self.table.insert(page, frame, personal);
            self.ledger.charge(OpClass::PageWrites, 1)?;
            return Ok(frame);
        }
        let frame = self.medium.allocate(self.alloc_policy)?;
        self.medium.write_bytes(frame, data)?;
        self.table.insert(page, frame, personal);
        self.ledger.charge(OpClass::PageWrites, 1)?;
        self.ledger.charge(OpClass::MappingUpdates, 1)?;
        Ok(frame)
    }

    /// Program `data` into a fresh frame; the superseded frame (if any)
    /// turns stale and keeps its bytes, which is where flash remanence
    /// comes from.
    pub fn write_out_of_place(
        &mut self,
        page: LogicalPage,
        data: &[u8],
        personal: bool,
    ) -> Result<FrameId, DeviceError> {
        if self.kind() != NvmKind::FlashLike {
            return Err(DeviceError::WrongKind { actual: self.kind() });
        }
        self.check_page_len(data)?;
        let frame = self.allocate_with_gc()?;
        self.medium.write_bytes(frame, data)?;
        if let Some(old) = self.table.invalidate(page) {
            self.medium.set_state(old.frame_id, FrameState::Stale)?;
            self.table.push_stale(old.frame_id, page, old.personal);
        }
        self.table.insert(page, frame, personal);
        self.ledger.charge(OpClass::PageWrites, 1)?;
        self.ledger.charge(OpClass::MappingUpdates, 1)?;
        Ok(frame)
    }

    /// Unmap a page without touching its bytes. Over-writable frames return
    /// to the free pool; flash frames turn stale until their block is erased.
    pub fn baseline_delete(&mut self, page: LogicalPage) -> Result<MappingEntry, DeviceError> {
        let entry = self
            .table
            .invalidate(page)
            .ok_or(DeviceError::NotMapped(page))?;
        match self.kind() {
            NvmKind::Overwritable => {
                self.medium.set_state(entry.frame_id, FrameState::Free)?;
            }
            NvmKind::FlashLike => {
                self.medium.set_state(entry.frame_id, FrameState::Stale)?;
                self.table.push_stale(entry.frame_id, page, entry.personal);
            }
        }
        self.ledger.charge(OpClass::MappingUpdates, 1)?;
        Ok(entry)
    }

    /// Replace the mode's spans with data from `source`. State-agnostic:
    /// sanitization works on live, free, or stale frames alike.
    ///
    /// Device-internal data is drawn from a stream reseeded with
    /// `seed ^ frame_id` so no two frames receive the same pattern.
    pub fn overwrite_in_place(
        &mut self,
        frame: FrameId,
        mode: &OverwriteMode,
        source: &RandomSource,
    ) -> Result<usize, DeviceError> {
        if self.kind() != NvmKind::Overwritable {
            return Err(DeviceError::WrongKind { actual: self.kind() });
        }
        mode.validate()?;
        self.medium.frame(frame)?;
        let page_size = self.geometry().page_size;
        let spans = overwrite_spans(mode, page_size);
        let total: usize = spans.iter().map(|s| s.1).sum();
        if total == 0 {
            return Ok(0);
        }
        let data = match source {
            RandomSource::DeviceInternal { seed } => {
                SplitMix64::bytes(*seed ^ frame as u64, total)
            }
            host @ RandomSource::HostSupplied { .. } => generate_random_data(host, total)?,
        };
        let mut consumed = 0;
        for (offset, len) in spans {
            self.medium
                .write_span(frame, offset, &data[consumed..consumed + len])?;
            consumed += len;
        }
        self.charge_overwrite(mode, total)?;
        Ok(total)
    }

    /// Flash in-place sanitize: clear the mode's spans to zero. Programming
    /// only moves bits 1 to 0, so this is the strongest in-place action the
    /// medium supports; random fill needs an erased page.
    pub fn program_clear(
        &mut self,
        frame: FrameId,
        mode: &OverwriteMode,
    ) -> Result<usize, DeviceError> {
        if self.kind() != NvmKind::FlashLike {
            return Err(DeviceError::WrongKind { actual: self.kind() });
        }
        mode.validate()?;
        self.medium.frame(frame)?;
        let page_size = self.geometry().page_size;
        let spans = overwrite_spans(mode, page_size);
        let total: usize = spans.iter().map(|s| s.1).sum();
        for (offset, len) in &spans {
            self.medium.clear_span(frame, *offset, *len)?;
        }
        self.charge_overwrite(mode, total)?;
        Ok(total)
    }

    fn charge_overwrite(&mut self, mode: &OverwriteMode, bytes: usize) -> Result<(), DeviceError> {
        match mode {
            OverwriteMode::Full => self.ledger.charge(OpClass::PageWrites, 1)?,
            OverwriteMode::Partial { .. } => self
                .ledger
                .charge(OpClass::PartialBytesWritten, bytes as u64)?,
        }
        Ok(())
    }

    /// Erase one block: relocate still-valid pages out first, then reset
    /// every frame to `0xFF` and drop the block's stale records. Returns the
    /// number of relocated pages.
    pub fn erase_block(&mut self, block: BlockId) -> Result<usize, DeviceError> {
        if self.kind() != NvmKind::FlashLike {
            return Err(DeviceError::WrongKind { actual: self.kind() });
        }
        if block >= self.geometry().block_count() {
            return Err(DeviceError::BadBlock(block));
        }
        let range = self.geometry().frames_in_block(block);

        let victims: Vec<MappingEntry> = self
            .table
            .valid_entries()
            .filter(|e| range.contains(&e.frame_id))
            .copied()
            .collect();

        let spare = self
            .medium
            .frames()
            .iter()
            .filter(|f| f.state == FrameState::Free && !range.contains(&f.id))
            .count();
        if spare < victims.len() {
            return Err(DeviceError::NoSpareBlock(block));
        }

        for entry in &victims {
            let target = self.allocate_excluding(block)?;
            let bytes = self.medium.frame_bytes(entry.frame_id)?.to_vec();
            self.medium.write_bytes(target, &bytes)?;
            self.table.insert(entry.logical_page, target, entry.personal);
            self.ledger.charge(OpClass::PageReads, 1)?;
            self.ledger.charge(OpClass::PageWrites, 1)?;
            self.ledger.charge(OpClass::MappingUpdates, 1)?;
        }

        self.medium.erase_block_raw(block)?;
        self.table.purge_stale_in(range);
        self.ledger.charge(OpClass::BlockErases, 1)?;
        Ok(victims.len())
    }

    fn allocate_excluding(&mut self, block: BlockId) -> Result<FrameId, DeviceError> {
        let range = self.geometry().frames_in_block(block);
        let found = self
            .medium
            .frames()
            .iter()
            .find(|f| f.state == FrameState::Free && !range.contains(&f.id))
            .map(|f| f.id)
            .ok_or(DeviceError::NoSpareBlock(block))?;
        self.medium.set_state(found, FrameState::Live)?;
        Ok(found)
    }

    /// Allocate a frame, reclaiming space on flash when none is free.
    fn allocate_with_gc(&mut self) -> Result<FrameId, DeviceError> {
        loop {
            match self.medium.allocate(self.alloc_policy) {
                Ok(frame) => return Ok(frame),
                Err(MediumError::MediumFull) if self.kind() == NvmKind::FlashLike => {
                    self.collect_garbage()?;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Greedy reclamation: erase the block with the fewest live pages among
    /// blocks that hold at least one stale frame (erasing a stale-free block
    /// gains nothing). Ties go to the lowest block id.
    fn collect_garbage(&mut self) -> Result<(), DeviceError> {
        let geometry = *self.geometry();
        let mut victim: Option<(usize, BlockId)> = None;
        for block in 0..geometry.block_count() {
            let range = geometry.frames_in_block(block);
            let mut live = 0;
            let mut stale = 0;
            for id in range {
                match self.medium.frame(id)?.state {
                    FrameState::Live => live += 1,
                    FrameState::Stale => stale += 1,
                    FrameState::Free => {}
                }
            }
            if stale == 0 {
                continue;
            }
            if victim.is_none_or(|(best, _)| live < best) {
                victim = Some((live, block));
            }
        }
        let (_, block) = victim.ok_or(MediumError::MediumFull)?;
        match self.erase_block(block) {
            // Reclamation that cannot relocate is exhaustion from the
            // writer's point of view.
            Err(DeviceError::NoSpareBlock(_)) => Err(MediumError::MediumFull.into()),
            other => other.map(|_| ()),
        }
    }

    fn check_page_len(&self, data: &[u8]) -> Result<(), DeviceError> {
        let want = self.geometry().page_size;
        if data.len() != want {
            return Err(MediumError::BadLength {
                got: data.len(),
                want,
            }
            .into());
        }
        Ok(())
    }

    /// Invalidate the mapping of a sanitized valid target. Over-writable
    /// frames return to the pool; flash frames stay dead until erase, on the
    /// books as already-retired stale records.
    pub(crate) fn retire_valid_target(&mut self, page: LogicalPage) -> Result<(), DeviceError> {
        let entry = self
            .table
            .invalidate(page)
            .ok_or(DeviceError::NotMapped(page))?;
        match self.kind() {
            NvmKind::Overwritable => {
                self.medium.set_state(entry.frame_id, FrameState::Free)?;
            }
            NvmKind::FlashLike => {
                self.medium.set_state(entry.frame_id, FrameState::Stale)?;
                self.table
                    .push_stale_retired(entry.frame_id, page, entry.personal);
            }
        }
        self.ledger.charge(OpClass::MappingUpdates, 1)?;
        Ok(())
    }

    /// Mark a sanitized stale record retired.
    pub(crate) fn retire_stale_target(&mut self, frame: FrameId) -> Result<(), DeviceError> {
        if self.table.retire_stale(frame) {
            self.ledger.charge(OpClass::MappingUpdates, 1)?;
        }
        Ok(())
    }

    /// Drop cached state consistency checks used by tests: every valid
    /// mapping points at a distinct live frame, stale records and stale
    /// frames are in bijection, and the three state sets partition the
    /// medium.
    pub fn audit_invariants(&self) -> Result<(), String> {
        use std::collections::BTreeSet;
        let mut seen = BTreeSet::new();
        for entry in self.table.valid_entries() {
            if !seen.insert(entry.frame_id) {
                return Err(format!("frame {} mapped by two valid entries", entry.frame_id));
            }
            let state = self
                .medium
                .frame(entry.frame_id)
                .map_err(|e| e.to_string())?
                .state;
            if state != FrameState::Live {
                return Err(format!(
                    "valid entry for page {} points at {:?} frame {}",
                    entry.logical_page, state, entry.frame_id
                ));
            }
        }
        let stale_frames: BTreeSet<FrameId> = self
            .medium
            .frames()
            .iter()
            .filter(|f| f.state == FrameState::Stale)
            .map(|f| f.id)
            .collect();
        let stale_records: BTreeSet<FrameId> =
            self.table.stale_records().map(|r| r.frame_id).collect();
        if stale_frames != stale_records {
            return Err(format!(
                "stale index {:?} out of step with stale frames {:?}",
                stale_records, stale_frames
            ));
        }
        if self.kind() == NvmKind::Overwritable && !stale_frames.is_empty() {
            return Err("over-writable medium produced stale frames".into());
        }
        Ok(())
    }
}
