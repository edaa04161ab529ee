//! Scenario assembly and deterministic trace replay.
//!
//! A scenario is geometry + cache config + medium kind + cost params + scan
//! window + master seed + trace. Replay applies records in tick order,
//! flushing idle cache entries at every tick boundary where something comes
//! due, then force-flushes, dumps the image, and scans for remanence of
//! every deleted personal page. The output is a pure function of the
//! scenario.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheConfig, CacheError, DramCache, EvictionPolicy};
use crate::cost::{compare, CostComparison, CostLedger, CostParams, CostSummary};
use crate::device::{DeviceError, NvmDevice};
use crate::forensics::{scan_medium, DeletedPageRecord, ForensicsError, RemanenceReport};
use crate::medium::{AllocPolicy, LogicalPage, MediumGeometry, MediumSidecar, NvmKind};
use crate::protocol::{
    CompletionStatus, DeletionCompletion, DeletionRequest, DeletionTarget, ProtocolEngine,
};
use crate::rng::{RandomSource, SplitMix64};
use crate::trace::{TraceOp, TraceRecord};

/// One threshold serves both the protocol's verification and the offline
/// scanner, so their verdicts stay comparable.
pub const DEFAULT_SCAN_WINDOW: usize = crate::protocol::DEFAULT_VERIFY_WINDOW;

/// On-disk scenario configuration (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub geometry: MediumGeometry,
    pub cache: CacheSection,
    pub device: DeviceSection,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub scan: ScanSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSection {
    pub capacity: usize,
    pub idle_timeout: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub kind: NvmKind,
    #[serde(default)]
    pub alloc_policy: AllocPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub window: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            window: DEFAULT_SCAN_WINDOW,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.geometry
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if self.cache.capacity == 0 || self.cache.idle_timeout == 0 {
            return Err(SimError::Config(
                "cache capacity and idle_timeout must be at least 1".into(),
            ));
        }
        if self.scan.window == 0 || self.scan.window > self.geometry.page_size {
            return Err(SimError::Config(format!(
                "scan window must lie in 1..={}",
                self.geometry.page_size
            )));
        }
        self.cost
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("trace line {line}: {source}")]
    Device {
        line: usize,
        #[source]
        source: DeviceError,
    },
    #[error("trace line {line}: {source}")]
    Cache {
        line: usize,
        #[source]
        source: CacheError,
    },
    #[error(transparent)]
    Forensics(#[from] ForensicsError),
    /// First unrecoverable device error; partial state rides along for
    /// debugging.
    #[error("aborted at trace line {line}: {reason}")]
    Aborted {
        line: usize,
        reason: String,
        partial: Box<RunOutput>,
    },
}

/// Final disposition of a personal page, for conservation accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Disposition {
    Live,
    BaselineDeleted,
    PrivacyClean,
    PrivacyResidue,
    PrivacyError,
}

/// Where every written personal page ended up. Every page lands in exactly
/// one bucket; `balanced` re-states that as a checkable flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub personal_pages_written: usize,
    pub live: usize,
    pub privacy_deleted_clean: usize,
    pub privacy_residue_found: usize,
    pub privacy_error: usize,
    pub baseline_deleted_recoverable: usize,
    pub baseline_deleted_unrecovered: usize,
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerBreakdown {
    pub total: CostSummary,
    pub baseline_deletes: CostSummary,
    pub privacy_deletes: CostSummary,
    /// privacy_deletes compared against baseline_deletes, dimension-wise.
    pub privacy_vs_baseline: CostComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEcho {
    pub kind: NvmKind,
    pub geometry: MediumGeometry,
    pub cache_capacity: usize,
    pub cache_idle_timeout: u64,
    pub scan_window: usize,
    pub master_seed: u64,
    pub cost: CostParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub line: usize,
    pub reason_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: ScenarioEcho,
    pub records_applied: usize,
    pub final_flush_count: usize,
    pub completions: Vec<DeletionCompletion>,
    pub remanence: RemanenceReport,
    pub ledgers: LedgerBreakdown,
    pub conservation: Conservation,
    /// Present only when the run aborted on a device error.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub image: Vec<u8>,
    pub sidecar: MediumSidecar,
}

struct Runner {
    device: NvmDevice,
    cache: DramCache,
    engine: ProtocolEngine,
    config: ScenarioConfig,
    /// Every payload version ever written per page: verification and scan
    /// ground truth (simulation-only; a real device keeps nothing).
    originals: BTreeMap<LogicalPage, Vec<Vec<u8>>>,
    personal: BTreeMap<LogicalPage, Disposition>,
    completions: Vec<DeletionCompletion>,
    baseline_slice: CostLedger,
    privacy_slice: CostLedger,
    next_request_id: u64,
    records_applied: usize,
    final_flush_count: usize,
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, SimError> {
    scenario.config.validate()?;
    let config = scenario.config.clone();
    let device = NvmDevice::new(config.geometry, config.device.kind, config.cost)
        .map_err(|e| SimError::Config(e.to_string()))?
        .with_alloc_policy(config.device.alloc_policy);
    let empty_ledger = CostLedger::new(config.cost, config.device.kind, config.geometry.page_size);
    let cache = DramCache::new(CacheConfig {
        capacity: config.cache.capacity,
        idle_timeout: config.cache.idle_timeout,
        eviction: EvictionPolicy::Lru,
    })
    .map_err(|e| SimError::Config(e.to_string()))?;

    let mut runner = Runner {
        device,
        cache,
        engine: ProtocolEngine::new(),
        config,
        originals: BTreeMap::new(),
        personal: BTreeMap::new(),
        completions: Vec::new(),
        baseline_slice: empty_ledger.clone(),
        privacy_slice: empty_ledger,
        next_request_id: 0,
        records_applied: 0,
        final_flush_count: 0,
    };

    for record in &scenario.trace {
        if let Err(err) = runner.apply(record) {
            let reason = err.to_string();
            let partial = runner.finalize(Some(reason.clone()))?;
            return Err(SimError::Aborted {
                line: record.line,
                reason,
                partial: Box::new(partial),
            });
        }
        runner.records_applied += 1;
    }

    match runner.cache.flush_all(&mut runner.device) {
        Ok(flushed) => runner.final_flush_count = flushed.len(),
        Err(err) => {
            let reason = err.to_string();
            let line = scenario.trace.last().map(|r| r.line).unwrap_or(0);
            let partial = runner.finalize(Some(reason.clone()))?;
            return Err(SimError::Aborted {
                line,
                reason,
                partial: Box::new(partial),
            });
        }
    }

    runner.finalize(None).map_err(Into::into)
}

impl Runner {
    fn apply(&mut self, record: &TraceRecord) -> Result<(), SimError> {
        self.drain_due_flushes(record.t, record.line)?;
        let line = record.line;
        match &record.op {
            TraceOp::Read { page } => {
                self.cache
                    .access_read(&mut self.device, *page, record.t)
                    .map_err(|source| SimError::Cache { line, source })?;
            }
            TraceOp::Write {
                page,
                seed,
                personal,
            } => {
                let payload = SplitMix64::bytes(*seed, self.config.geometry.page_size);
                self.cache
                    .access_write(&mut self.device, *page, &payload, *personal, record.t)
                    .map_err(|source| SimError::Cache { line, source })?;
                let versions = self.originals.entry(*page).or_default();
                if !versions.contains(&payload) {
                    versions.push(payload);
                }
                if *personal {
                    self.personal.insert(*page, Disposition::Live);
                }
            }
            TraceOp::BaselineDelete { page } => {
                let dropped = self.cache.discard(*page).is_some();
                let mapped = self.device.translate(*page).is_some();
                if mapped {
                    let before = self.device.ledger().clone();
                    self.device
                        .baseline_delete(*page)
                        .map_err(|source| SimError::Device { line, source })?;
                    self.absorb_slice(&before, true);
                } else if !dropped {
                    return Err(SimError::Device {
                        line,
                        source: DeviceError::NotMapped(*page),
                    });
                }
                if self.personal.contains_key(page) {
                    self.personal.insert(*page, Disposition::BaselineDeleted);
                }
            }
            TraceOp::PrivacyDelete {
                target,
                mode,
                source,
                window,
            } => {
                self.privacy_delete(record, target, mode, source, *window)?;
            }
        }
        Ok(())
    }

    fn privacy_delete(
        &mut self,
        record: &TraceRecord,
        target: &DeletionTarget,
        mode: &crate::device::OverwriteMode,
        source: &Option<RandomSource>,
        window: Option<usize>,
    ) -> Result<(), SimError> {
        let request_id = self.next_request_id;
        self.next_request_id += 1;

        // Deletion supersedes pending writes: cached copies of the targets
        // are discarded, never flushed.
        let dropped: Vec<LogicalPage> = match target {
            DeletionTarget::ByLogicalPage(page) => {
                self.cache.discard(*page).map(|e| e.logical_page).into_iter().collect()
            }
            DeletionTarget::ByPersonalTag => {
                let pages = self.cache.pages_where(|e| e.personal);
                for &page in &pages {
                    self.cache.discard(page);
                }
                pages
            }
        };

        // Default seed is mixed once so it never lands on a stream seed
        // trivially related to a trace data seed.
        let request = DeletionRequest {
            request_id,
            target: target.clone(),
            mode: *mode,
            source: source.clone().unwrap_or(RandomSource::DeviceInternal {
                seed: SplitMix64::new(self.config.master_seed ^ request_id).next_u64(),
            }),
            verify_window: window.unwrap_or(self.config.scan.window),
        };

        let originals = self.originals_flat();
        let before = self.device.ledger().clone();
        let outcome = self.engine.run(&mut self.device, &request, &originals);
        self.absorb_slice(&before, false);

        // Per-page disposition: a page with surviving fragments is residue;
        // everything else targeted (or dropped from cache) follows the
        // completion status.
        let mut touched: Vec<LogicalPage> = outcome.targets.iter().map(|t| t.logical_page).collect();
        touched.extend(dropped);
        touched.sort_unstable();
        touched.dedup();
        for page in touched {
            if !self.personal.contains_key(&page) {
                continue;
            }
            let disposition = match &outcome.completion.status {
                CompletionStatus::Deleted => Disposition::PrivacyClean,
                CompletionStatus::ResidueFound => {
                    if outcome.residue.iter().any(|f| f.source_page == page) {
                        Disposition::PrivacyResidue
                    } else {
                        Disposition::PrivacyClean
                    }
                }
                CompletionStatus::Error(_) => Disposition::PrivacyError,
            };
            self.personal.insert(page, disposition);
        }

        self.completions.push(outcome.completion.clone());
        if let CompletionStatus::Error(reason) = &outcome.completion.status {
            return Err(SimError::Device {
                line: record.line,
                source: DeviceError::ProtocolFailed(reason.clone()),
            });
        }
        Ok(())
    }

    /// Call tick_flush at every tick boundary up to `now` where some dirty
    /// entry comes due. Equivalent to ticking one by one, without the walk.
    fn drain_due_flushes(&mut self, now: u64, line: usize) -> Result<(), SimError> {
        while let Some(due) = self.cache.next_flush_due() {
            if due > now {
                break;
            }
            self.cache
                .tick_flush(&mut self.device, due)
                .map_err(|source| SimError::Cache { line, source })?;
        }
        Ok(())
    }

    fn absorb_slice(&mut self, before: &CostLedger, baseline: bool) {
        let slice = self
            .device
            .ledger()
            .diff(before)
            .expect("same params within one run");
        let acc = if baseline {
            &mut self.baseline_slice
        } else {
            &mut self.privacy_slice
        };
        acc.merge(&slice).expect("same params within one run");
    }

    fn originals_flat(&self) -> Vec<DeletedPageRecord> {
        self.originals
            .iter()
            .flat_map(|(&page, versions)| {
                versions.iter().map(move |payload| DeletedPageRecord {
                    page,
                    payload: payload.clone(),
                })
            })
            .collect()
    }

    fn finalize(&mut self, aborted: Option<String>) -> Result<RunOutput, ForensicsError> {
        let image = self.device.medium().image();
        let sidecar = self.device.medium().sidecar();

        // Deleted personal pages under study: everything not still live.
        let manifest: Vec<DeletedPageRecord> = self
            .originals
            .iter()
            .filter(|(page, _)| {
                matches!(
                    self.personal.get(page),
                    Some(
                        Disposition::BaselineDeleted
                            | Disposition::PrivacyClean
                            | Disposition::PrivacyResidue
                            | Disposition::PrivacyError
                    )
                )
            })
            .flat_map(|(&page, versions)| {
                versions.iter().map(move |payload| DeletedPageRecord {
                    page,
                    payload: payload.clone(),
                })
            })
            .collect();

        let remanence = scan_medium(
            &image,
            &self.config.geometry,
            &manifest,
            self.config.scan.window,
        )?;

        // Baseline-deleted pages split by what the scan could still see.
        let mut conservation = Conservation {
            personal_pages_written: self.personal.len(),
            live: 0,
            privacy_deleted_clean: 0,
            privacy_residue_found: 0,
            privacy_error: 0,
            baseline_deleted_recoverable: 0,
            baseline_deleted_unrecovered: 0,
            balanced: false,
        };
        use std::collections::BTreeSet;
        let recoverable: BTreeSet<LogicalPage> =
            remanence.fragments.iter().map(|f| f.source_page).collect();
        for (page, disposition) in &self.personal {
            match disposition {
                Disposition::Live => conservation.live += 1,
                Disposition::PrivacyClean => conservation.privacy_deleted_clean += 1,
                Disposition::PrivacyResidue => conservation.privacy_residue_found += 1,
                Disposition::PrivacyError => conservation.privacy_error += 1,
                Disposition::BaselineDeleted => {
                    if recoverable.contains(page) {
                        conservation.baseline_deleted_recoverable += 1;
                    } else {
                        conservation.baseline_deleted_unrecovered += 1;
                    }
                }
            }
        }
        conservation.balanced = conservation.live
            + conservation.privacy_deleted_clean
            + conservation.privacy_residue_found
            + conservation.privacy_error
            + conservation.baseline_deleted_recoverable
            + conservation.baseline_deleted_unrecovered
            == conservation.personal_pages_written;

        let ledgers = LedgerBreakdown {
            total: self.device.ledger().summary(),
            baseline_deletes: self.baseline_slice.summary(),
            privacy_deletes: self.privacy_slice.summary(),
            privacy_vs_baseline: compare(&self.privacy_slice, &self.baseline_slice)
                .expect("same params within one run"),
        };

        let report = RunReport {
            scenario: ScenarioEcho {
                kind: self.config.device.kind,
                geometry: self.config.geometry,
                cache_capacity: self.config.cache.capacity,
                cache_idle_timeout: self.config.cache.idle_timeout,
                scan_window: self.config.scan.window,
                master_seed: self.config.master_seed,
                cost: self.config.cost,
            },
            records_applied: self.records_applied,
            final_flush_count: self.final_flush_count,
            completions: self.completions.clone(),
            remanence,
            ledgers,
            conservation,
            aborted,
        };

        Ok(RunOutput {
            report,
            image,
            sidecar,
        })
    }
}
