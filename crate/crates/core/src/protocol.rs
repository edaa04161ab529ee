//! The privacy-protection deletion protocol: request, search, overwrite,
//! verify, completion.
//!
//! A request names its target (one logical page, or everything tagged
//! personal), the overwrite degree, and where the random data comes from.
//! The state machine runs Received -> Searching -> Overwriting -> Verifying
//! and only a passed verification may end in Completed; residue or device
//! failure ends in Failed. Mappings are invalidated only after a passed
//! verification, so failed requests stay retryable.
//!
//! Verification compares the sanitized frames against the pre-deletion
//! payloads. A real device cannot retain what it is erasing; the payloads
//! are simulation ground truth supplied by the harness.

use serde::{Deserialize, Serialize};

use crate::device::{DeviceError, NvmDevice, OverwriteMode};
use crate::forensics::{DeletedPageRecord, FragmentMatch, GramIndex};
use crate::medium::{FrameId, LogicalPage, Medium, NvmKind};
use crate::rng::RandomSource;

pub const DEFAULT_VERIFY_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletionTarget {
    ByLogicalPage(LogicalPage),
    ByPersonalTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeletionRequest {
    pub request_id: u64,
    pub target: DeletionTarget,
    pub mode: OverwriteMode,
    pub source: RandomSource,
    pub verify_window: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolState {
    Received,
    Searching,
    Overwriting,
    Verifying,
    Completed,
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOrigin {
    /// Currently mapped copy of the page.
    Valid,
    /// Superseded stale copy (flash only).
    Invalid,
}

/// One frame the search selected for sanitization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTarget {
    pub frame_id: FrameId,
    pub origin: TargetOrigin,
    pub logical_page: LogicalPage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionStatus {
    Deleted,
    ResidueFound,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCompletion {
    pub request_id: u64,
    pub status: CompletionStatus,
    pub frames_sanitized: u64,
    pub residue_fragments: u64,
    pub cost: crate::cost::CostSummary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Absent,
    Present(Vec<FragmentMatch>),
}

/// Result of sanitizing one target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub target: SearchTarget,
    pub result: Result<usize, DeviceError>,
}

/// Everything a protocol run produced, including the visited states for
/// trace assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    pub completion: DeletionCompletion,
    pub states: Vec<ProtocolState>,
    pub targets: Vec<SearchTarget>,
    /// Fragments verification found, empty on a passed verification.
    pub residue: Vec<FragmentMatch>,
}

/// Locate every frame holding the requested data: frames of matching valid
/// entries, and on flash the not-yet-retired stale copies. Sorted by frame
/// id; a frame is either live or stale, never both.
pub fn search_targets(device: &NvmDevice, request: &DeletionRequest) -> Vec<SearchTarget> {
    let table = device.table();
    let mut out: Vec<SearchTarget> = Vec::new();
    match &request.target {
        DeletionTarget::ByLogicalPage(page) => {
            if let Some(frame_id) = table.translate(*page) {
                out.push(SearchTarget {
                    frame_id,
                    origin: TargetOrigin::Valid,
                    logical_page: *page,
                });
            }
            for rec in table.stale_records() {
                if rec.logical_page == *page && !rec.retired {
                    out.push(SearchTarget {
                        frame_id: rec.frame_id,
                        origin: TargetOrigin::Invalid,
                        logical_page: rec.logical_page,
                    });
                }
            }
        }
        DeletionTarget::ByPersonalTag => {
            for entry in table.valid_entries().filter(|e| e.personal) {
                out.push(SearchTarget {
                    frame_id: entry.frame_id,
                    origin: TargetOrigin::Valid,
                    logical_page: entry.logical_page,
                });
            }
            for rec in table.stale_records().filter(|r| r.personal && !r.retired) {
                out.push(SearchTarget {
                    frame_id: rec.frame_id,
                    origin: TargetOrigin::Invalid,
                    logical_page: rec.logical_page,
                });
            }
        }
    }
    out.sort_by_key(|t| t.frame_id);
    out
}

/// Sanitize each target frame: random in-place overwrite on over-writable
/// media, bit-clearing zero fill on flash. All targets are processed even
/// when one fails.
pub fn execute_overwrite(
    device: &mut NvmDevice,
    targets: &[SearchTarget],
    mode: &OverwriteMode,
    source: &RandomSource,
) -> Vec<FrameOutcome> {
    targets
        .iter()
        .map(|&target| {
            let result = match device.kind() {
                NvmKind::Overwritable => {
                    device.overwrite_in_place(target.frame_id, mode, source)
                }
                NvmKind::FlashLike => device.program_clear(target.frame_id, mode),
            };
            FrameOutcome { target, result }
        })
        .collect()
}

/// Check the targeted frames for surviving runs of the original payloads.
/// Pure read of the medium.
pub fn verify_absence(
    medium: &Medium,
    originals: &[DeletedPageRecord],
    targets: &[SearchTarget],
    verify_window: usize,
) -> Verdict {
    let index = GramIndex::build(originals, verify_window);
    let mut fragments = Vec::new();
    for target in targets {
        let bytes = match medium.frame_bytes(target.frame_id) {
            Ok(b) => b,
            Err(_) => continue,
        };
        for (page, ranges) in index.frame_matches(bytes) {
            for (offset, length) in ranges {
                fragments.push(FragmentMatch {
                    frame_id: target.frame_id,
                    offset_in_frame: offset,
                    length,
                    source_page: page,
                });
            }
        }
    }
    fragments.sort_by_key(|f| (f.frame_id, f.offset_in_frame, f.source_page));
    if fragments.is_empty() {
        Verdict::Absent
    } else {
        Verdict::Present(fragments)
    }
}

/// Drive one deletion request through the full state machine.
///
/// `originals` supplies pre-deletion payloads; only entries for targeted
/// pages take part in verification. On a passed verification the valid
/// targets are unmapped and the stale targets retired, and the completion
/// reports `Deleted`; residue reports `ResidueFound` and leaves mappings
/// untouched.
pub fn run_protocol(
    device: &mut NvmDevice,
    request: &DeletionRequest,
    originals: &[DeletedPageRecord],
) -> ProtocolOutcome {
    let mut states = vec![ProtocolState::Received];
    let ledger_before = device.ledger().clone();

    let fail = |states: &mut Vec<ProtocolState>, reason: String| {
        states.push(ProtocolState::Failed(reason));
    };

    if let Err(e) = validate_request(device, request) {
        let reason = e.to_string();
        fail(&mut states, reason.clone());
        return ProtocolOutcome {
            completion: completion_of(device, &ledger_before, request, CompletionStatus::Error(reason), 0, 0),
            states,
            targets: vec![],
            residue: vec![],
        };
    }

    states.push(ProtocolState::Searching);
    let targets = search_targets(device, request);

    states.push(ProtocolState::Overwriting);
    let outcomes = execute_overwrite(device, &targets, &request.mode, &request.source);
    let frames_sanitized = outcomes.iter().filter(|o| o.result.is_ok()).count() as u64;
    let first_error = outcomes
        .iter()
        .find_map(|o| o.result.as_ref().err().map(|e| e.to_string()));

    // Never skip verification: the verdict is reported even on a partial
    // failure so the caller sees what is still readable.
    states.push(ProtocolState::Verifying);
    let targeted_pages: std::collections::BTreeSet<LogicalPage> =
        targets.iter().map(|t| t.logical_page).collect();
    let scoped: Vec<DeletedPageRecord> = originals
        .iter()
        .filter(|r| targeted_pages.contains(&r.page))
        .cloned()
        .collect();
    for _ in &targets {
        // Verification reads each targeted frame once.
        let _ = device.charge(crate::cost::OpClass::PageReads, 1);
    }
    let verdict = verify_absence(device.medium(), &scoped, &targets, request.verify_window);

    if let Some(reason) = first_error {
        fail(&mut states, reason.clone());
        let fragments = match verdict {
            Verdict::Absent => vec![],
            Verdict::Present(frags) => frags,
        };
        return ProtocolOutcome {
            completion: completion_of(
                device,
                &ledger_before,
                request,
                CompletionStatus::Error(reason),
                frames_sanitized,
                fragments.len() as u64,
            ),
            states,
            targets,
            residue: fragments,
        };
    }

    match verdict {
        Verdict::Absent => {
            // Passed verification: now and only now touch the mapping.
            for target in &targets {
                let result = match target.origin {
                    TargetOrigin::Valid => device.retire_valid_target(target.logical_page),
                    TargetOrigin::Invalid => device.retire_stale_target(target.frame_id),
                };
                debug_assert!(result.is_ok());
            }
            states.push(ProtocolState::Completed);
            ProtocolOutcome {
                completion: completion_of(
                    device,
                    &ledger_before,
                    request,
                    CompletionStatus::Deleted,
                    frames_sanitized,
                    0,
                ),
                states,
                targets,
                residue: vec![],
            }
        }
        Verdict::Present(fragments) => {
            let count = fragments.len() as u64;
            fail(&mut states, format!("{count} residue fragment(s) remain"));
            ProtocolOutcome {
                completion: completion_of(
                    device,
                    &ledger_before,
                    request,
                    CompletionStatus::ResidueFound,
                    frames_sanitized,
                    count,
                ),
                states,
                targets,
                residue: fragments,
            }
        }
    }
}

fn validate_request(device: &NvmDevice, request: &DeletionRequest) -> Result<(), DeviceError> {
    request.mode.validate()?;
    let page_size = device.geometry().page_size;
    if request.verify_window == 0 || request.verify_window > page_size {
        return Err(DeviceError::BadVerifyWindow {
            window: request.verify_window,
            page_size,
        });
    }
    Ok(())
}

fn completion_of(
    device: &NvmDevice,
    ledger_before: &crate::cost::CostLedger,
    request: &DeletionRequest,
    status: CompletionStatus,
    frames_sanitized: u64,
    residue_fragments: u64,
) -> DeletionCompletion {
    let slice = device
        .ledger()
        .diff(ledger_before)
        .expect("same device, same params");
    DeletionCompletion {
        request_id: request.request_id,
        status,
        frames_sanitized,
        residue_fragments,
        cost: slice.summary(),
    }
}

/// Serializes request intake: one in-flight request per device, duplicate
/// request ids rejected.
#[derive(Debug, Clone, Default)]
pub struct ProtocolEngine {
    seen: std::collections::BTreeSet<u64>,
}

impl ProtocolEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run(
        &mut self,
        device: &mut NvmDevice,
        request: &DeletionRequest,
        originals: &[DeletedPageRecord],
    ) -> ProtocolOutcome {
        if !self.seen.insert(request.request_id) {
            let reason = format!("request id {} already used", request.request_id);
            let before = device.ledger().clone();
            return ProtocolOutcome {
                completion: completion_of(
                    device,
                    &before,
                    request,
                    CompletionStatus::Error(reason.clone()),
                    0,
                    0,
                ),
                states: vec![ProtocolState::Received, ProtocolState::Failed(reason)],
                targets: vec![],
                residue: vec![],
            };
        }
        run_protocol(device, request, originals)
    }
}
