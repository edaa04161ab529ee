//! The physical NVM medium: a flat array of page frames.
//!
//! Frames carry raw bytes and a lifecycle state. Byte retention is the whole
//! point of the model: deallocating a frame never touches its contents, so
//! remanence is observable in the dumped image. The one exception is flash
//! block erase, which resets every frame in the block to `0xFF`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type FrameId = usize;
pub type BlockId = usize;
pub type LogicalPage = u64;

/// Frames-per-block default used when a config does not say otherwise.
pub const DEFAULT_BLOCK_SIZE: usize = 64;
/// Page size default.
pub const DEFAULT_PAGE_SIZE: usize = 4096;

/// Medium kind. Over-writable media accept arbitrary in-place writes;
/// flash-like media program out-of-place and can only clear bits in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NvmKind {
    Overwritable,
    FlashLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediumGeometry {
    pub page_size: usize,
    pub frame_count: usize,
    pub block_size: usize,
}

impl MediumGeometry {
    pub fn new(page_size: usize, frame_count: usize, block_size: usize) -> Result<Self, MediumError> {
        let geom = Self {
            page_size,
            frame_count,
            block_size,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), MediumError> {
        if self.page_size == 0 || self.frame_count == 0 || self.block_size == 0 {
            return Err(MediumError::BadGeometry(
                "page_size, frame_count and block_size must all be positive".into(),
            ));
        }
        if !self.frame_count.is_multiple_of(self.block_size) {
            return Err(MediumError::BadGeometry(format!(
                "frame_count {} is not a multiple of block_size {}",
                self.frame_count, self.block_size
            )));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.frame_count / self.block_size
    }

    pub fn block_of(&self, frame: FrameId) -> BlockId {
        frame / self.block_size
    }

    /// Frame ids belonging to `block`.
    pub fn frames_in_block(&self, block: BlockId) -> std::ops::Range<FrameId> {
        block * self.block_size..(block + 1) * self.block_size
    }
}

impl Default for MediumGeometry {
    fn default() -> Self {
        Self {
            page_size: DEFAULT_PAGE_SIZE,
            frame_count: 256,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameState {
    Free,
    Live,
    /// Superseded copy awaiting block erase. Only flash-like media produce
    /// this state.
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhysicalFrame {
    pub id: FrameId,
    bytes: Vec<u8>,
    pub state: FrameState,
    pub erase_count: u64,
}

impl PhysicalFrame {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Frame allocation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocPolicy {
    /// Lowest-index free frame. Deterministic default.
    #[default]
    FirstFree,
    /// Next free frame after the previous allocation, wrapping.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MediumError {
    #[error("invalid geometry: {0}")]
    BadGeometry(String),
    #[error("no free frame available")]
    MediumFull,
    #[error("frame {0} out of range")]
    BadFrame(FrameId),
    #[error("data length {got} does not match page size {want}")]
    BadLength { got: usize, want: usize },
}

/// One NVM medium instance.
#[derive(Debug, Clone)]
pub struct Medium {
    geometry: MediumGeometry,
    kind: NvmKind,
    frames: Vec<PhysicalFrame>,
    rr_cursor: usize,
}

impl Medium {
    /// Fresh medium. Flash frames start erased (all `0xFF`); over-writable
    /// frames start zeroed.
    pub fn new(geometry: MediumGeometry, kind: NvmKind) -> Result<Self, MediumError> {
        geometry.validate()?;
        let fill = match kind {
            NvmKind::FlashLike => 0xFF,
            NvmKind::Overwritable => 0x00,
        };
        let frames = (0..geometry.frame_count)
            .map(|id| PhysicalFrame {
                id,
                bytes: vec![fill; geometry.page_size],
                state: FrameState::Free,
                erase_count: 0,
            })
            .collect();
        Ok(Self {
            geometry,
            kind,
            frames,
            rr_cursor: 0,
        })
    }

    pub fn geometry(&self) -> &MediumGeometry {
        &self.geometry
    }

    pub fn kind(&self) -> NvmKind {
        self.kind
    }

    pub fn frame(&self, id: FrameId) -> Result<&PhysicalFrame, MediumError> {
        self.frames.get(id).ok_or(MediumError::BadFrame(id))
    }

    pub fn frames(&self) -> &[PhysicalFrame] {
        &self.frames
    }

    pub fn frame_bytes(&self, id: FrameId) -> Result<&[u8], MediumError> {
        Ok(self.frame(id)?.bytes())
    }

    /// Claim a free frame and mark it live. The mapping table is the
    /// caller's responsibility.
    pub fn allocate(&mut self, policy: AllocPolicy) -> Result<FrameId, MediumError> {
        let n = self.frames.len();
        let found = match policy {
            AllocPolicy::FirstFree => (0..n).find(|&i| self.frames[i].state == FrameState::Free),
            AllocPolicy::RoundRobin => (0..n)
                .map(|off| (self.rr_cursor + off) % n)
                .find(|&i| self.frames[i].state == FrameState::Free),
        };
        let id = found.ok_or(MediumError::MediumFull)?;
        self.frames[id].state = FrameState::Live;
        self.rr_cursor = (id + 1) % n;
        Ok(id)
    }

    pub fn free_frame_count(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| f.state == FrameState::Free)
            .count()
    }

    pub(crate) fn set_state(&mut self, id: FrameId, state: FrameState) -> Result<(), MediumError> {
        self.frames
            .get_mut(id)
            .ok_or(MediumError::BadFrame(id))?
            .state = state;
        Ok(())
    }

    /// Replace the full page contents of a frame.
    pub(crate) fn write_bytes(&mut self, id: FrameId, data: &[u8]) -> Result<(), MediumError> {
        if data.len() != self.geometry.page_size {
            return Err(MediumError::BadLength {
                got: data.len(),
                want: self.geometry.page_size,
            });
        }
        self.frames
            .get_mut(id)
            .ok_or(MediumError::BadFrame(id))?
            .bytes
            .copy_from_slice(data);
        Ok(())
    }

    /// Replace bytes in `range` of a frame.
    pub(crate) fn write_span(
        &mut self,
        id: FrameId,
        offset: usize,
        data: &[u8],
    ) -> Result<(), MediumError> {
        if offset + data.len() > self.geometry.page_size {
            return Err(MediumError::BadLength {
                got: offset + data.len(),
                want: self.geometry.page_size,
            });
        }
        let frame = self.frames.get_mut(id).ok_or(MediumError::BadFrame(id))?;
        frame.bytes[offset..offset + data.len()].copy_from_slice(data);
        Ok(())
    }

    /// AND bytes in `range` of a frame with zero (flash bit clearing).
    pub(crate) fn clear_span(
        &mut self,
        id: FrameId,
        offset: usize,
        len: usize,
    ) -> Result<(), MediumError> {
        if offset + len > self.geometry.page_size {
            return Err(MediumError::BadLength {
                got: offset + len,
                want: self.geometry.page_size,
            });
        }
        let frame = self.frames.get_mut(id).ok_or(MediumError::BadFrame(id))?;
        frame.bytes[offset..offset + len].fill(0x00);
        Ok(())
    }

    /// Reset every frame of a block to erased state. Returns nothing;
    /// relocation of live data is the device's job, done beforehand.
    pub(crate) fn erase_block_raw(&mut self, block: BlockId) -> Result<(), MediumError> {
        if block >= self.geometry.block_count() {
            return Err(MediumError::BadFrame(block * self.geometry.block_size));
        }
        for id in self.geometry.frames_in_block(block) {
            let frame = &mut self.frames[id];
            frame.bytes.fill(0xFF);
            frame.state = FrameState::Free;
            frame.erase_count += 1;
        }
        Ok(())
    }

    /// Raw image: frame bytes concatenated in frame-id order. Pure read.
    pub fn image(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.geometry.frame_count * self.geometry.page_size);
        for frame in &self.frames {
            out.extend_from_slice(&frame.bytes);
        }
        out
    }

    /// Sidecar metadata describing the dumped image.
    pub fn sidecar(&self) -> MediumSidecar {
        MediumSidecar {
            geometry: self.geometry,
            frames: self
                .frames
                .iter()
                .map(|f| FrameMeta {
                    id: f.id,
                    state: f.state,
                    erase_count: f.erase_count,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediumSidecar {
    pub geometry: MediumGeometry,
    pub frames: Vec<FrameMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub id: FrameId,
    pub state: FrameState,
    pub erase_count: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: NvmKind) -> Medium {
        Medium::new(MediumGeometry::new(4, 8, 2).unwrap(), kind).unwrap()
    }

    #[test]
    fn geometry_must_divide() {
        assert!(MediumGeometry::new(4, 10, 3).is_err());
        assert!(MediumGeometry::new(0, 8, 2).is_err());
        assert!(MediumGeometry::new(4, 8, 2).is_ok());
    }

    #[test]
    fn first_free_allocates_lowest_index() {
        let mut m = tiny(NvmKind::Overwritable);
        assert_eq!(m.allocate(AllocPolicy::FirstFree).unwrap(), 0);
        assert_eq!(m.allocate(AllocPolicy::FirstFree).unwrap(), 1);
        assert_eq!(m.allocate(AllocPolicy::FirstFree).unwrap(), 2);
        assert_eq!(m.allocate(AllocPolicy::FirstFree).unwrap(), 3);
        assert_eq!(m.frame(0).unwrap().state, FrameState::Live);
    }

    #[test]
    fn exhaustion_reports_full() {
        let mut m = tiny(NvmKind::Overwritable);
        for _ in 0..8 {
            m.allocate(AllocPolicy::FirstFree).unwrap();
        }
        assert_eq!(
            m.allocate(AllocPolicy::FirstFree),
            Err(MediumError::MediumFull)
        );
    }

    #[test]
    fn round_robin_wraps() {
        let mut m = tiny(NvmKind::Overwritable);
        assert_eq!(m.allocate(AllocPolicy::RoundRobin).unwrap(), 0);
        assert_eq!(m.allocate(AllocPolicy::RoundRobin).unwrap(), 1);
        m.set_state(0, FrameState::Free).unwrap();
        // Cursor sits at 2; frame 0 is reached only after wrapping past 7.
        assert_eq!(m.allocate(AllocPolicy::RoundRobin).unwrap(), 2);
        for id in [3, 4, 5, 6, 7, 0] {
            assert_eq!(m.allocate(AllocPolicy::RoundRobin).unwrap(), id);
        }
    }

    #[test]
    fn flash_starts_erased_overwritable_starts_zeroed() {
        let flash = tiny(NvmKind::FlashLike);
        let ow = tiny(NvmKind::Overwritable);
        assert!(flash.frame_bytes(0).unwrap().iter().all(|&b| b == 0xFF));
        assert!(ow.frame_bytes(0).unwrap().iter().all(|&b| b == 0x00));
    }

    #[test]
    fn image_concatenates_in_frame_order() {
        let mut m = tiny(NvmKind::Overwritable);
        m.write_bytes(0, &[0xAA, 0xBB, 0xCC, 0xDD]).unwrap();
        m.write_bytes(1, &[0x00, 0x11, 0x22, 0x33]).unwrap();
        let image = m.image();
        assert_eq!(&image[..8], hex::decode("aabbccdd00112233").unwrap().as_slice());
        // Purity: dumping twice with no ops in between is identical.
        assert_eq!(m.image(), image);
    }

    #[test]
    fn sidecar_matches_geometry() {
        let m = tiny(NvmKind::FlashLike);
        let sc = m.sidecar();
        assert_eq!(sc.frames.len(), sc.geometry.frame_count);
        assert!(sc.frames.iter().all(|f| f.state == FrameState::Free));
    }

    #[test]
    fn erase_resets_block_only() {
        let mut m = tiny(NvmKind::FlashLike);
        m.write_bytes(0, &[0; 4]).unwrap();
        m.write_bytes(2, &[0; 4]).unwrap();
        m.erase_block_raw(0).unwrap();
        assert!(m.frame_bytes(0).unwrap().iter().all(|&b| b == 0xFF));
        assert!(m.frame_bytes(1).unwrap().iter().all(|&b| b == 0xFF));
        assert!(m.frame_bytes(2).unwrap().iter().all(|&b| b == 0x00));
        assert_eq!(m.frame(0).unwrap().erase_count, 1);
        assert_eq!(m.frame(2).unwrap().erase_count, 0);
    }
}
