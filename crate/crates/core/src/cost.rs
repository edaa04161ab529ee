//! Media-operation accounting.
//!
//! Counters accumulate per operation class; modeled latency and energy are
//! linear in the counters. Partial writes are charged pro-rata by
//! bytes/page_size. The numbers that go in are configuration, not silicon
//! measurements; the shipped example config labels its values illustrative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::NvmKind;

/// Latency in nanoseconds and energy in nanojoules per operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub read_latency_ns: f64,
    pub write_latency_ns: f64,
    /// Flash-like media only.
    pub erase_latency_ns: f64,
    pub read_energy_nj: f64,
    pub write_energy_nj: f64,
    /// Flash-like media only.
    pub erase_energy_nj: f64,
    pub mapping_update_latency_ns: f64,
    pub mapping_update_energy_nj: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        // Illustrative round numbers: reads an order cheaper than writes,
        // block erase 10x a page write. Not vendor data.
        Self {
            read_latency_ns: 100.0,
            write_latency_ns: 500.0,
            erase_latency_ns: 5000.0,
            read_energy_nj: 1.0,
            write_energy_nj: 5.0,
            erase_energy_nj: 50.0,
            mapping_update_latency_ns: 20.0,
            mapping_update_energy_nj: 0.25,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        let all = [
            self.read_latency_ns,
            self.write_latency_ns,
            self.erase_latency_ns,
            self.read_energy_nj,
            self.write_energy_nj,
            self.erase_energy_nj,
            self.mapping_update_latency_ns,
            self.mapping_update_energy_nj,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CostError::BadParams);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    PageReads,
    PageWrites,
    /// Bytes touched by partial overwrites/clears; costed as a fraction of
    /// a page write.
    PartialBytesWritten,
    BlockErases,
    MappingUpdates,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("operation class {0:?} does not exist on this medium kind")]
    UnknownClass(OpClass),
    #[error("cost parameters must be finite and non-negative")]
    BadParams,
    #[error("ledgers use different cost parameters or page size")]
    ParamMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostCounters {
    pub page_reads: u64,
    pub page_writes: u64,
    pub partial_bytes_written: u64,
    pub block_erases: u64,
    pub mapping_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostLedger {
    params: CostParams,
    kind: NvmKind,
    page_size: usize,
    counters: CostCounters,
}

impl CostLedger {
    pub fn new(params: CostParams, kind: NvmKind, page_size: usize) -> Self {
        Self {
            params,
            kind,
            page_size,
            counters: CostCounters::default(),
        }
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn counters(&self) -> &CostCounters {
        &self.counters
    }

    pub fn charge(&mut self, class: OpClass, amount: u64) -> Result<(), CostError> {
        if class == OpClass::BlockErases && self.kind == NvmKind::Overwritable {
            return Err(CostError::UnknownClass(class));
        }
        let counter = match class {
            OpClass::PageReads => &mut self.counters.page_reads,
            OpClass::PageWrites => &mut self.counters.page_writes,
            OpClass::PartialBytesWritten => &mut self.counters.partial_bytes_written,
            OpClass::BlockErases => &mut self.counters.block_erases,
            OpClass::MappingUpdates => &mut self.counters.mapping_updates,
        };
        *counter += amount;
        Ok(())
    }

    pub fn total_latency_ns(&self) -> f64 {
        let p = &self.params;
        let c = &self.counters;
        c.page_reads as f64 * p.read_latency_ns
            + c.page_writes as f64 * p.write_latency_ns
            + (c.partial_bytes_written as f64 / self.page_size as f64) * p.write_latency_ns
            + c.block_erases as f64 * p.erase_latency_ns
            + c.mapping_updates as f64 * p.mapping_update_latency_ns
    }

    pub fn total_energy_nj(&self) -> f64 {
        let p = &self.params;
        let c = &self.counters;
        c.page_reads as f64 * p.read_energy_nj
            + c.page_writes as f64 * p.write_energy_nj
            + (c.partial_bytes_written as f64 / self.page_size as f64) * p.write_energy_nj
            + c.block_erases as f64 * p.erase_energy_nj
            + c.mapping_updates as f64 * p.mapping_update_energy_nj
    }

    /// Counter-wise difference `self - earlier`; the slice attributable to
    /// the operations between two snapshots.
    pub fn diff(&self, earlier: &CostLedger) -> Result<CostLedger, CostError> {
        if self.params != earlier.params || self.page_size != earlier.page_size {
            return Err(CostError::ParamMismatch);
        }
        let a = &self.counters;
        let b = &earlier.counters;
        Ok(CostLedger {
            params: self.params,
            kind: self.kind,
            page_size: self.page_size,
            counters: CostCounters {
                page_reads: a.page_reads - b.page_reads,
                page_writes: a.page_writes - b.page_writes,
                partial_bytes_written: a.partial_bytes_written - b.partial_bytes_written,
                block_erases: a.block_erases - b.block_erases,
                mapping_updates: a.mapping_updates - b.mapping_updates,
            },
        })
    }

    /// Combine ledgers from independent runs.
    pub fn merge(&mut self, other: &CostLedger) -> Result<(), CostError> {
        if self.params != other.params || self.page_size != other.page_size {
            return Err(CostError::ParamMismatch);
        }
        let a = &mut self.counters;
        let b = &other.counters;
        a.page_reads += b.page_reads;
        a.page_writes += b.page_writes;
        a.partial_bytes_written += b.partial_bytes_written;
        a.block_erases += b.block_erases;
        a.mapping_updates += b.mapping_updates;
        Ok(())
    }

    pub fn summary(&self) -> CostSummary {
        CostSummary {
            counters: self.counters,
            latency_ns: self.total_latency_ns(),
            energy_nj: self.total_energy_nj(),
        }
    }
}

/// Serializable snapshot of a ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    #[serde(flatten)]
    pub counters: CostCounters,
    pub latency_ns: f64,
    pub energy_nj: f64,
}

/// One compared dimension: absolute values, delta, and ratio a/b.
/// `ratio` is `None` when b is zero (the infinite marker).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostDelta {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub ratio: Option<f64>,
}

impl CostDelta {
    fn of(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            delta: a - b,
            ratio: if b > 0.0 { Some(a / b) } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub page_reads: CostDelta,
    pub page_writes: CostDelta,
    pub partial_bytes_written: CostDelta,
    pub block_erases: CostDelta,
    pub mapping_updates: CostDelta,
    pub latency_ns: CostDelta,
    pub energy_nj: CostDelta,
}

/// Dimension-wise comparison of two ledgers with identical parameters.
pub fn compare(a: &CostLedger, b: &CostLedger) -> Result<CostComparison, CostError> {
    if a.params != b.params || a.page_size != b.page_size {
        return Err(CostError::ParamMismatch);
    }
    let (ca, cb) = (&a.counters, &b.counters);
    Ok(CostComparison {
        page_reads: CostDelta::of(ca.page_reads as f64, cb.page_reads as f64),
        page_writes: CostDelta::of(ca.page_writes as f64, cb.page_writes as f64),
        partial_bytes_written: CostDelta::of(
            ca.partial_bytes_written as f64,
            cb.partial_bytes_written as f64,
        ),
        block_erases: CostDelta::of(ca.block_erases as f64, cb.block_erases as f64),
        mapping_updates: CostDelta::of(ca.mapping_updates as f64, cb.mapping_updates as f64),
        latency_ns: CostDelta::of(a.total_latency_ns(), b.total_latency_ns()),
        energy_nj: CostDelta::of(a.total_energy_nj(), b.total_energy_nj()),
    })
}
