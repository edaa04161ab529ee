//! Trace-driven simulator of a hybrid DRAM+NVM main memory.
//!
//! The model: a write-back DRAM cache flushes idle dirty pages into
//! non-volatile memory, where deleting data the ordinary way only rewrites
//! the mapping table and leaves the bytes behind. The simulator implements
//! a privacy-protection deletion protocol (search every copy, overwrite
//! with random data, verify absence, signal completion), an offline
//! forensic scanner that measures how much deleted data survives on a raw
//! medium image, and a cost ledger that prices the protocol against
//! mapping-table-only deletion and against block erase.
//!
//! Two medium kinds are modeled: over-writable NVM accepting arbitrary
//! in-place writes, and flash-like NVM where updates go out-of-place and
//! in-place sanitization can only clear bits. Every run is deterministic:
//! all randomness derives from SplitMix64 seeds carried by the scenario.

pub mod cache;
pub mod cost;
pub mod device;
pub mod forensics;
pub mod mapping;
pub mod medium;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod scenario;
pub(crate) mod serde_hex;
pub mod trace;

pub use cache::{CacheConfig, CacheError, DramCache, ReadOutcome, ReadSource};
pub use cost::{compare, CostComparison, CostError, CostLedger, CostParams, CostSummary, OpClass};
pub use device::{
    DeviceError, Fraction, NvmDevice, OverwriteMode, PartialLayout, overwrite_span_bytes,
    overwrite_spans,
};
pub use forensics::{
    diff_image, scan_medium, DeletedPageRecord, FragmentMatch, ForensicsError, RemanenceReport,
};
pub use mapping::{MappingEntry, MappingTable, StaleRecord};
pub use medium::{
    AllocPolicy, FrameId, FrameState, LogicalPage, Medium, MediumError, MediumGeometry,
    MediumSidecar, NvmKind,
};
pub use protocol::{
    run_protocol, search_targets, verify_absence, CompletionStatus, DeletionCompletion,
    DeletionRequest, DeletionTarget, ProtocolEngine, ProtocolOutcome, ProtocolState,
    SearchTarget, TargetOrigin, Verdict,
};
pub use report::{canonical_json, emit_report, ReportError, ReportFormat};
pub use rng::{generate_random_data, RandomSource, RngError, SplitMix64};
pub use scenario::{
    run_scenario, RunOutput, RunReport, Scenario, ScenarioConfig, SimError,
};
pub use trace::{parse_trace, TraceError, TraceOp, TraceRecord};
