//! Offline forensic scanning of raw medium images.
//!
//! A deleted page counts as recoverable when any window-length run of its
//! original payload survives anywhere on the medium. Matching is framed per
//! physical page: a fragment never straddles a frame boundary.
//!
//! Fragment semantics: for a frame and a payload, a window start `s` matches
//! when the frame bytes at `[s, s+window)` appear contiguously anywhere in
//! the payload. The byte ranges covered by matching windows are merged, and
//! each maximal covered range is reported as one fragment. Every fragment is
//! therefore at least `window` bytes long.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::{FrameId, LogicalPage, MediumGeometry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForensicsError {
    #[error("image is {got} bytes, geometry implies {want}")]
    BadImage { got: usize, want: usize },
    #[error("images differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("scan window must be at least 1")]
    BadWindow,
}

/// A surviving run of original payload bytes found on the medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentMatch {
    pub frame_id: FrameId,
    pub offset_in_frame: usize,
    pub length: usize,
    pub source_page: LogicalPage,
}

/// One manifest row: a deleted page and one payload version it held.
/// A page may appear in several rows when it was rewritten.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletedPageRecord {
    pub page: LogicalPage,
    #[serde(with = "crate::serde_hex")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemanenceReport {
    pub scanned_frames: usize,
    pub deleted_pages_total: usize,
    pub deleted_pages_recoverable: usize,
    /// recoverable / total; 0 when the manifest is empty.
    pub remanence_rate: f64,
    pub fragments: Vec<FragmentMatch>,
}

/// Merge matching window starts into maximal covered byte ranges.
fn coverage_ranges(starts: &[bool], window: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (s, hit) in starts.iter().enumerate() {
        if !hit {
            continue;
        }
        let (begin, end) = (s, s + window);
        match out.last_mut() {
            Some((_, last_end)) if begin <= *last_end => {
                *last_end = (*last_end).max(end);
            }
            _ => out.push((begin, end)),
        }
    }
    out.iter().map(|&(b, e)| (b, e - b)).collect()
}

/// Window-gram index over all payloads of a manifest, built once per scan
/// and shared across frames. Maps each distinct gram to the ascending list
/// of source pages containing it; lookups compare exact bytes, so there are
/// no false positives.
pub(crate) struct GramIndex<'a> {
    window: usize,
    grams: HashMap<&'a [u8], Vec<LogicalPage>>,
    pages: usize,
}

impl<'a> GramIndex<'a> {
    pub(crate) fn build(manifest: &'a [DeletedPageRecord], window: usize) -> Self {
        let mut by_page: BTreeMap<LogicalPage, Vec<&'a [u8]>> = BTreeMap::new();
        for record in manifest {
            by_page
                .entry(record.page)
                .or_default()
                .push(&record.payload);
        }
        let mut grams: HashMap<&'a [u8], Vec<LogicalPage>> = HashMap::new();
        for (&page, payloads) in &by_page {
            for payload in payloads {
                if payload.len() < window {
                    continue;
                }
                for gram in payload.windows(window) {
                    let pages = grams.entry(gram).or_default();
                    // Pages arrive in ascending order, so a duplicate can
                    // only be the most recent entry.
                    if pages.last() != Some(&page) {
                        pages.push(page);
                    }
                }
            }
        }
        Self {
            window,
            grams,
            pages: by_page.len(),
        }
    }

    pub(crate) fn page_count(&self) -> usize {
        self.pages
    }

    /// Fragments of each source page inside one frame: maximal byte ranges
    /// covered by matching windows.
    pub(crate) fn frame_matches(
        &self,
        frame_bytes: &[u8],
    ) -> BTreeMap<LogicalPage, Vec<(usize, usize)>> {
        if frame_bytes.len() < self.window {
            return BTreeMap::new();
        }
        let n_starts = frame_bytes.len() - self.window + 1;
        let mut starts: BTreeMap<LogicalPage, Vec<bool>> = BTreeMap::new();
        for (s, gram) in frame_bytes.windows(self.window).enumerate() {
            if let Some(pages) = self.grams.get(gram) {
                for &page in pages {
                    starts.entry(page).or_insert_with(|| vec![false; n_starts])[s] = true;
                }
            }
        }
        starts
            .into_iter()
            .map(|(page, hit)| (page, coverage_ranges(&hit, self.window)))
            .collect()
    }
}

/// Scan a raw image for surviving fragments of each deleted page.
/// Pure function of its inputs.
pub fn scan_medium(
    image: &[u8],
    geometry: &MediumGeometry,
    manifest: &[DeletedPageRecord],
    window: usize,
) -> Result<RemanenceReport, ForensicsError> {
    let want = geometry.frame_count * geometry.page_size;
    if image.len() != want {
        return Err(ForensicsError::BadImage {
            got: image.len(),
            want,
        });
    }
    if window == 0 {
        return Err(ForensicsError::BadWindow);
    }

    let index = GramIndex::build(manifest, window);
    let mut fragments = Vec::new();
    let mut recoverable: std::collections::BTreeSet<LogicalPage> = Default::default();
    for (frame_id, frame_bytes) in image.chunks(geometry.page_size).enumerate() {
        for (page, ranges) in index.frame_matches(frame_bytes) {
            for (offset, length) in ranges {
                fragments.push(FragmentMatch {
                    frame_id,
                    offset_in_frame: offset,
                    length,
                    source_page: page,
                });
                recoverable.insert(page);
            }
        }
    }
    fragments.sort_by_key(|f| (f.frame_id, f.offset_in_frame, f.source_page));

    let total = index.page_count();
    Ok(RemanenceReport {
        scanned_frames: geometry.frame_count,
        deleted_pages_total: total,
        deleted_pages_recoverable: recoverable.len(),
        remanence_rate: if total == 0 {
            0.0
        } else {
            recoverable.len() as f64 / total as f64
        },
        fragments,
    })
}

/// Maximal (offset, length) ranges where two equal-length images differ.
pub fn diff_image(before: &[u8], after: &[u8]) -> Result<Vec<(usize, usize)>, ForensicsError> {
    if before.len() != after.len() {
        return Err(ForensicsError::LengthMismatch(before.len(), after.len()));
    }
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..before.len() {
        let differs = before[i] != after[i];
        match (differs, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(start)) => {
                out.push((start, i - start));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(start) = run_start {
        out.push((start, before.len() - start));
    }
    Ok(out)
}
