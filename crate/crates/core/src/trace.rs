//! JSON Lines trace parsing.
//!
//! One record per line, sorted by tick (ties keep file order). Payloads are
//! named by seed, not embedded: a write's data is the SplitMix64 stream of
//! its seed, page_size bytes long. That keeps traces compact and gives
//! verification distinct high-entropy sentinels for free.
//!
//! ```text
//! {"t":0,"op":"write","page":5,"seed":7,"personal":true}
//! {"t":3,"op":"read","page":5}
//! {"t":9,"op":"baseline_delete","page":5}
//! {"t":12,"op":"privacy_delete","page":5,"mode":{"kind":"full"}}
//! {"t":13,"op":"privacy_delete","scope":"personal","mode":{"kind":"full"},
//!  "source":{"kind":"device_internal","seed":9},"window":16}
//! ```

use serde::Deserialize;
use thiserror::Error;

use crate::device::OverwriteMode;
use crate::medium::LogicalPage;
use crate::protocol::DeletionTarget;
use crate::rng::{RandomSource, SplitMix64};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: tick {got} goes backwards (previous record at {prev})")]
    Order { line: usize, prev: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub t: u64,
    pub line: usize,
    pub op: TraceOp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceOp {
    Read {
        page: LogicalPage,
    },
    Write {
        page: LogicalPage,
        seed: u64,
        personal: bool,
    },
    BaselineDelete {
        page: LogicalPage,
    },
    PrivacyDelete {
        target: DeletionTarget,
        mode: OverwriteMode,
        /// None lets the runner derive a device-internal seed from the
        /// scenario master seed and the request ordinal.
        source: Option<RandomSource>,
        /// None falls back to the scenario scan window.
        window: Option<usize>,
    },
}

/// Source descriptor as written in traces. `host_seeded` is a compact way
/// to say "the host shipped this many stream bytes with the request"
/// without embedding them.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SourceDescriptor {
    DeviceInternal {
        seed: u64,
    },
    HostSupplied {
        #[serde(with = "crate::serde_hex")]
        bytes: Vec<u8>,
    },
    HostSeeded {
        seed: u64,
        len: usize,
    },
}

impl SourceDescriptor {
    fn materialize(self) -> RandomSource {
        match self {
            SourceDescriptor::DeviceInternal { seed } => RandomSource::DeviceInternal { seed },
            SourceDescriptor::HostSupplied { bytes } => RandomSource::HostSupplied { bytes },
            SourceDescriptor::HostSeeded { seed, len } => RandomSource::HostSupplied {
                bytes: SplitMix64::bytes(seed, len),
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    t: u64,
    op: String,
    page: Option<LogicalPage>,
    seed: Option<u64>,
    personal: Option<bool>,
    scope: Option<String>,
    mode: Option<OverwriteMode>,
    source: Option<SourceDescriptor>,
    window: Option<usize>,
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    let mut prev_t: Option<u64> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(raw_line).map_err(|e| TraceError::Parse {
            line,
            reason: e.to_string(),
        })?;
        if let Some(prev) = prev_t {
            if raw.t < prev {
                return Err(TraceError::Order {
                    line,
                    prev,
                    got: raw.t,
                });
            }
        }
        prev_t = Some(raw.t);
        records.push(TraceRecord {
            t: raw.t,
            line,
            op: typed_op(raw, line)?,
        });
    }
    Ok(records)
}

fn typed_op(raw: RawRecord, line: usize) -> Result<TraceOp, TraceError> {
    let parse_err = |reason: String| TraceError::Parse { line, reason };
    let need_page = |raw: &RawRecord, op: &str| {
        raw.page
            .ok_or_else(|| parse_err(format!("op \"{op}\" requires \"page\"")))
    };
    match raw.op.as_str() {
        "read" => Ok(TraceOp::Read {
            page: need_page(&raw, "read")?,
        }),
        "write" => Ok(TraceOp::Write {
            page: need_page(&raw, "write")?,
            seed: raw
                .seed
                .ok_or_else(|| parse_err("op \"write\" requires \"seed\"".into()))?,
            personal: raw.personal.unwrap_or(false),
        }),
        "baseline_delete" => Ok(TraceOp::BaselineDelete {
            page: need_page(&raw, "baseline_delete")?,
        }),
        "privacy_delete" => {
            let target = match (raw.scope.as_deref(), raw.page) {
                (None, Some(page)) => DeletionTarget::ByLogicalPage(page),
                (Some("personal"), None) => DeletionTarget::ByPersonalTag,
                (Some("personal"), Some(_)) => {
                    return Err(parse_err(
                        "privacy_delete takes \"page\" or \"scope\", not both".into(),
                    ));
                }
                (Some(other), _) => {
                    return Err(parse_err(format!("unknown scope \"{other}\"")));
                }
                (None, None) => {
                    return Err(parse_err(
                        "privacy_delete needs \"page\" or \"scope\":\"personal\"".into(),
                    ));
                }
            };
            let mode = raw
                .mode
                .ok_or_else(|| parse_err("privacy_delete requires \"mode\"".into()))?;
            mode.validate()
                .map_err(|e| parse_err(e.to_string()))?;
            if let Some(w) = raw.window {
                if w == 0 {
                    return Err(parse_err("window must be at least 1".into()));
                }
            }
            Ok(TraceOp::PrivacyDelete {
                target,
                mode,
                source: raw.source.map(SourceDescriptor::materialize),
                window: raw.window,
            })
        }
        other => Err(parse_err(format!("unknown op \"{other}\""))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{Fraction, PartialLayout};

    #[test]
    fn happy_path_write() {
        let records =
            parse_trace(r#"{"t":0,"op":"write","page":5,"seed":7,"personal":true}"#).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].t, 0);
        assert_eq!(
            records[0].op,
            TraceOp::Write {
                page: 5,
                seed: 7,
                personal: true
            }
        );
    }

    #[test]
    fn ticks_must_not_decrease() {
        let text = "{\"t\":3,\"op\":\"read\",\"page\":1}\n{\"t\":1,\"op\":\"read\",\"page\":1}";
        assert_eq!(
            parse_trace(text),
            Err(TraceError::Order {
                line: 2,
                prev: 3,
                got: 1
            })
        );
    }

    #[test]
    fn equal_ticks_keep_file_order() {
        let text = "{\"t\":3,\"op\":\"read\",\"page\":1}\n{\"t\":3,\"op\":\"read\",\"page\":2}";
        let records = parse_trace(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].line, 2);
    }

    #[test]
    fn unknown_op_rejected() {
        let err = parse_trace(r#"{"t":0,"op":"wipe","page":1}"#).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
    }

    #[test]
    fn unknown_field_rejected() {
        let err = parse_trace(r#"{"t":0,"op":"read","page":1,"extra":true}"#).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
    }

    #[test]
    fn privacy_delete_with_mode_and_source() {
        let text = concat!(
            r#"{"t":2,"op":"privacy_delete","page":9,"#,
            r#""mode":{"kind":"partial","fraction":{"num":1,"den":4},"layout":{"stripes":2}},"#,
            r#""source":{"kind":"host_seeded","seed":3,"len":8},"window":4}"#
        );
        let records = parse_trace(text).unwrap();
        match &records[0].op {
            TraceOp::PrivacyDelete {
                target,
                mode,
                source,
                window,
            } => {
                assert_eq!(*target, DeletionTarget::ByLogicalPage(9));
                assert_eq!(
                    *mode,
                    OverwriteMode::Partial {
                        fraction: Fraction { num: 1, den: 4 },
                        layout: PartialLayout::Stripes(2)
                    }
                );
                assert_eq!(
                    *source,
                    Some(RandomSource::HostSupplied {
                        bytes: SplitMix64::bytes(3, 8)
                    })
                );
                assert_eq!(*window, Some(4));
            }
            other => panic!("wrong op: {other:?}"),
        }
    }

    #[test]
    fn privacy_delete_scope_personal() {
        let text = r#"{"t":2,"op":"privacy_delete","scope":"personal","mode":{"kind":"full"}}"#;
        let records = parse_trace(text).unwrap();
        assert!(matches!(
            &records[0].op,
            TraceOp::PrivacyDelete {
                target: DeletionTarget::ByPersonalTag,
                ..
            }
        ));
    }

    #[test]
    fn privacy_delete_without_mode_rejected() {
        let err = parse_trace(r#"{"t":2,"op":"privacy_delete","page":9}"#).unwrap_err();
        assert!(matches!(err, TraceError::Parse { .. }));
    }

    #[test]
    fn invalid_fraction_rejected_at_parse() {
        let text = concat!(
            r#"{"t":2,"op":"privacy_delete","page":9,"#,
            r#""mode":{"kind":"partial","fraction":{"num":4,"den":4},"layout":"prefix"}}"#
        );
        let err = parse_trace(text).unwrap_err();
        assert!(matches!(err, TraceError::Parse { .. }));
    }

    #[test]
    fn blank_lines_skipped() {
        let text = "\n{\"t\":0,\"op\":\"read\",\"page\":1}\n\n";
        assert_eq!(parse_trace(text).unwrap().len(), 1);
    }
}
