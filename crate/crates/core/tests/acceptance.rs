//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Every tolerance is pinned in the assertions; rates asserted with `==`
//! are exact by construction (integer-ratio f64 divisions reproduce the
//! literal on every platform).

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};

use remsim_core::cost::CostParams;
use remsim_core::device::{Fraction, NvmDevice, OverwriteMode, PartialLayout};
use remsim_core::forensics::{diff_image, scan_medium, DeletedPageRecord, FragmentMatch};
use remsim_core::medium::{FrameState, MediumGeometry, NvmKind};
use remsim_core::protocol::{
    run_protocol, CompletionStatus, DeletionRequest, DeletionTarget, ProtocolState,
};
use remsim_core::report::{emit_report, ReportFormat};
use remsim_core::rng::{RandomSource, SplitMix64};
use remsim_core::scenario::{run_scenario, Scenario, ScenarioConfig};
use remsim_core::trace::parse_trace;

fn criterion(name: &str, body: impl FnOnce() + UnwindSafe) {
    match catch_unwind(body) {
        Ok(()) => println!("[PASS] {name}"),
        Err(panic) => {
            println!("[FAIL] {name}");
            resume_unwind(panic);
        }
    }
}

fn params() -> CostParams {
    // Illustrative defaults: block erase is 10x a page write.
    let p = CostParams::default();
    assert!(p.erase_latency_ns >= 10.0 * p.write_latency_ns);
    p
}

/// Quadratic brute-force matcher, independent of the library path: a start
/// matches when its window occurs in a payload, found by direct comparison;
/// coverage merges into maximal ranges per the fragment contract.
fn naive_fragments(
    image: &[u8],
    page_size: usize,
    manifest: &[DeletedPageRecord],
    window: usize,
) -> Vec<FragmentMatch> {
    use std::collections::BTreeMap;
    let mut by_page: BTreeMap<u64, Vec<&[u8]>> = BTreeMap::new();
    for rec in manifest {
        by_page.entry(rec.page).or_default().push(&rec.payload);
    }
    let mut out = Vec::new();
    for (&page, payloads) in &by_page {
        for (frame_id, frame) in image.chunks(page_size).enumerate() {
            if frame.len() < window {
                continue;
            }
            let mut covered = vec![false; frame.len()];
            for s in 0..=frame.len() - window {
                let needle = &frame[s..s + window];
                let hit = payloads.iter().any(|p| {
                    p.len() >= window
                        && (0..=p.len() - window).any(|j| &p[j..j + window] == needle)
                });
                if hit {
                    for slot in covered.iter_mut().skip(s).take(window) {
                        *slot = true;
                    }
                }
            }
            let mut i = 0;
            while i < covered.len() {
                if covered[i] {
                    let begin = i;
                    while i < covered.len() && covered[i] {
                        i += 1;
                    }
                    out.push(FragmentMatch {
                        frame_id,
                        offset_in_frame: begin,
                        length: i - begin,
                        source_page: page,
                    });
                } else {
                    i += 1;
                }
            }
        }
    }
    out.sort_by_key(|f| (f.frame_id, f.offset_in_frame, f.source_page));
    out
}

const PAGE: usize = 64;
const WINDOW: usize = 16;

fn write_personal_pages(dev: &mut NvmDevice, seeder: &mut SplitMix64, n: u64) -> Vec<DeletedPageRecord> {
    (0..n)
        .map(|page| {
            let payload = SplitMix64::bytes(seeder.next_u64(), dev.geometry().page_size);
            dev.write_page(page, &payload, true).unwrap();
            DeletedPageRecord { page, payload }
        })
        .collect()
}

#[test]
fn acceptance_1_baseline_remanence_is_total() {
    criterion(
        "criterion 1: baseline deletion leaves a 100% remanence rate",
        || {
            for kind in [NvmKind::Overwritable, NvmKind::FlashLike] {
                let geometry = MediumGeometry::new(PAGE, 128, 8).unwrap();
                let mut dev = NvmDevice::new(geometry, kind, params()).unwrap();
                let mut seeder = SplitMix64::new(0xBA5E);
                let manifest = write_personal_pages(&mut dev, &mut seeder, 64);

                let before = dev.medium().image();
                for page in 0..64 {
                    dev.baseline_delete(page).unwrap();
                }
                let after = dev.medium().image();
                assert_eq!(
                    diff_image(&before, &after).unwrap(),
                    vec![],
                    "baseline deletion must not move a single byte ({kind:?})"
                );

                let report = scan_medium(&after, &geometry, &manifest, WINDOW).unwrap();
                assert_eq!(report.deleted_pages_total, 64);
                assert_eq!(report.deleted_pages_recoverable, 64);
                assert_eq!(report.remanence_rate, 1.0, "exact rate ({kind:?})");
            }
        },
    );
}

#[test]
fn acceptance_2_full_policy_soundness_on_overwritable() {
    criterion(
        "criterion 2: full-mode policy deletes 64 pages across 100 seeds",
        || {
            let mut master = SplitMix64::new(0xACCE97);
            let expected_states = vec![
                ProtocolState::Received,
                ProtocolState::Searching,
                ProtocolState::Overwriting,
                ProtocolState::Verifying,
                ProtocolState::Completed,
            ];
            for _ in 0..100 {
                let run_seed = master.next_u64();
                let mut seeder = SplitMix64::new(run_seed);
                let geometry = MediumGeometry::new(PAGE, 128, 8).unwrap();
                let mut dev = NvmDevice::new(geometry, NvmKind::Overwritable, params()).unwrap();
                let manifest = write_personal_pages(&mut dev, &mut seeder, 64);

                let request = DeletionRequest {
                    request_id: 1,
                    target: DeletionTarget::ByPersonalTag,
                    mode: OverwriteMode::Full,
                    source: RandomSource::DeviceInternal { seed: seeder.next_u64() },
                    verify_window: WINDOW,
                };
                let outcome = run_protocol(&mut dev, &request, &manifest);
                assert_eq!(
                    outcome.completion.status,
                    CompletionStatus::Deleted,
                    "seed {run_seed}"
                );
                assert_eq!(outcome.completion.frames_sanitized, 64);
                assert_eq!(outcome.states, expected_states, "verify precedes complete");

                let report =
                    scan_medium(&dev.medium().image(), &geometry, &manifest, WINDOW).unwrap();
                assert_eq!(report.remanence_rate, 0.0, "seed {run_seed}");
                assert!(report.fragments.is_empty());
            }
        },
    );
}

#[test]
fn acceptance_3_flash_stale_copy_remanence_after_gc() {
    criterion(
        "criterion 3: garbage collection erases 6 of 10 stale frames, rate 0.4",
        || {
            // 16 frames in blocks of 2. Ten personal pages fill frames 0..9,
            // baseline deletion turns them all stale. Six filler writes take
            // frames 10..15; each further pair of writes forces one GC cycle
            // on the lowest all-stale block. Twelve fillers mean three GC
            // erases: blocks 0..2, exactly 6 stale frames gone.
            let geometry = MediumGeometry::new(PAGE, 16, 2).unwrap();
            let mut dev = NvmDevice::new(geometry, NvmKind::FlashLike, params()).unwrap();
            let mut seeder = SplitMix64::new(0x6C);
            let manifest = write_personal_pages(&mut dev, &mut seeder, 10);
            for page in 0..10 {
                dev.baseline_delete(page).unwrap();
            }
            assert_eq!(dev.table().stale_len(), 10);

            for filler in 0..12u64 {
                let payload = SplitMix64::bytes(seeder.next_u64(), PAGE);
                dev.write_page(100 + filler, &payload, false).unwrap();
            }

            // Frame-state audit: exactly 4 stale frames survive, in frames
            // 6..=9; blocks 0..2 were erased once each.
            let stale: Vec<usize> = dev
                .medium()
                .frames()
                .iter()
                .filter(|f| f.state == FrameState::Stale)
                .map(|f| f.id)
                .collect();
            assert_eq!(stale, vec![6, 7, 8, 9]);
            assert_eq!(dev.ledger().counters().block_erases, 3);
            for frame in dev.medium().frames() {
                let expected_erases = u64::from(frame.id < 6);
                assert_eq!(frame.erase_count, expected_erases, "frame {}", frame.id);
            }
            dev.audit_invariants().unwrap();

            let report =
                scan_medium(&dev.medium().image(), &geometry, &manifest, WINDOW).unwrap();
            assert_eq!(report.deleted_pages_total, 10);
            assert_eq!(report.deleted_pages_recoverable, 4);
            assert_eq!(report.remanence_rate, 0.4, "exact by construction");
        },
    );
}

#[test]
fn acceptance_4_partial_overwrite_residue_law_and_cost() {
    criterion(
        "criterion 4: partial sweep leaves residue iff an untouched run >= 16, cost increasing",
        || {
            let page_size = 4096usize;
            let sweep: [(u32, u32); 4] = [(1, 64), (1, 4), (1, 2), (1, 1)];
            let mut last_latency = -1.0f64;
            for (num, den) in sweep {
                let geometry = MediumGeometry::new(page_size, 4, 2).unwrap();
                let mut dev = NvmDevice::new(geometry, NvmKind::Overwritable, params()).unwrap();
                let payload = SplitMix64::bytes(0xF00D + num as u64 * 64 + den as u64, page_size);
                dev.write_page(0, &payload, true).unwrap();
                let manifest = vec![DeletedPageRecord {
                    page: 0,
                    payload: payload.clone(),
                }];

                let full = num == den;
                let mode = if full {
                    OverwriteMode::Full
                } else {
                    OverwriteMode::Partial {
                        fraction: Fraction::new(num, den).unwrap(),
                        layout: PartialLayout::Prefix,
                    }
                };
                let request = DeletionRequest {
                    request_id: 1,
                    target: DeletionTarget::ByLogicalPage(0),
                    mode,
                    source: RandomSource::DeviceInternal { seed: 0x5EED },
                    verify_window: WINDOW,
                };
                let outcome = run_protocol(&mut dev, &request, &manifest);

                let overwritten = if full {
                    page_size
                } else {
                    (num as usize * page_size).div_ceil(den as usize)
                };
                let untouched_run = page_size - overwritten;
                if untouched_run >= WINDOW {
                    assert_eq!(
                        outcome.completion.status,
                        CompletionStatus::ResidueFound,
                        "f={num}/{den}: {untouched_run} untouched bytes"
                    );
                    assert!(outcome.completion.residue_fragments > 0);
                } else {
                    assert_eq!(outcome.completion.status, CompletionStatus::Deleted);
                }

                // Brute-force matcher agrees on every frame of the image.
                let image = dev.medium().image();
                let scan = scan_medium(&image, &geometry, &manifest, WINDOW).unwrap();
                let naive = naive_fragments(&image, page_size, &manifest, WINDOW);
                assert_eq!(scan.fragments, naive, "f={num}/{den}");
                assert_eq!(outcome.residue, naive, "protocol saw the same residue");

                let latency = outcome.completion.cost.latency_ns;
                assert!(
                    latency > last_latency,
                    "cost must increase with f: {latency} after {last_latency}"
                );
                last_latency = latency;
            }
        },
    );
}

#[test]
fn acceptance_5_flash_monotonicity_and_erase_completeness() {
    criterion(
        "criterion 5: 1000 program_clear calls never set a bit; erase leaves no fragment",
        || {
            let mut rng = SplitMix64::new(0xC1EA2);
            let mut clears = 0usize;
            while clears < 1000 {
                let geometry = MediumGeometry::new(32, 8, 2).unwrap();
                let mut dev = NvmDevice::new(geometry, NvmKind::FlashLike, params()).unwrap();
                let mut payloads = Vec::new();
                for page in 0..5u64 {
                    let payload = SplitMix64::bytes(rng.next_u64(), 32);
                    dev.write_page(page, &payload, true).unwrap();
                    payloads.push(DeletedPageRecord { page, payload });
                }
                for _ in 0..(1 + rng.next_u64() % 3) {
                    let frame = (rng.next_u64() % 8) as usize;
                    let mode = match rng.next_u64() % 3 {
                        0 => OverwriteMode::Full,
                        1 => OverwriteMode::Partial {
                            fraction: Fraction::new(1 + (rng.next_u64() % 6) as u32, 8).unwrap(),
                            layout: PartialLayout::Prefix,
                        },
                        _ => OverwriteMode::Partial {
                            fraction: Fraction::new(1 + (rng.next_u64() % 6) as u32, 8).unwrap(),
                            layout: PartialLayout::Stripes(1 + (rng.next_u64() % 4) as u32),
                        },
                    };
                    let before = dev.medium().frame_bytes(frame).unwrap().to_vec();
                    dev.program_clear(frame, &mode).unwrap();
                    let after = dev.medium().frame_bytes(frame).unwrap().to_vec();
                    for (b, a) in before.iter().zip(&after) {
                        assert_eq!(a & !b, 0, "a bit went 0 -> 1");
                    }
                    clears += 1;
                }

                // Erase block 0 and scan just that block: nothing survives.
                let relocated = dev.erase_block(0).unwrap();
                let _ = relocated;
                let image = dev.medium().image();
                let block_image = &image[..2 * 32];
                let block_geometry = MediumGeometry::new(32, 2, 2).unwrap();
                let report =
                    scan_medium(block_image, &block_geometry, &payloads, 4).unwrap();
                assert_eq!(report.fragments, vec![]);
                assert_eq!(report.deleted_pages_recoverable, 0);
            }
        },
    );
}

#[test]
fn acceptance_6_scan_oracle_equivalence() {
    criterion(
        "criterion 6: scanner matches the brute-force oracle on 500 instances",
        || {
            let mut rng = SplitMix64::new(0x02AC1E);
            for instance in 0..500 {
                let frames = 1 + (rng.next_u64() % 64) as usize;
                let page_size = 4 + (rng.next_u64() % 29) as usize; // 4..=32
                let window = 2 + (rng.next_u64() % 7) as usize; // 2..=8
                let low_entropy = rng.next_u64().is_multiple_of(2);
                let geometry = MediumGeometry::new(page_size, frames, 1).unwrap();

                let byte = |rng: &mut SplitMix64| -> u8 {
                    let b = (rng.next_u64() & 0xFF) as u8;
                    if low_entropy {
                        b & 1
                    } else {
                        b
                    }
                };
                let mut image: Vec<u8> = (0..frames * page_size).map(|_| byte(&mut rng)).collect();
                let mut manifest = Vec::new();
                for page in 0..1 + rng.next_u64() % 4 {
                    let payload: Vec<u8> = (0..page_size).map(|_| byte(&mut rng)).collect();
                    // Plant a random slice of the payload somewhere.
                    let src = (rng.next_u64() as usize) % page_size;
                    let len = 1 + (rng.next_u64() as usize) % (page_size - src);
                    let dst = (rng.next_u64() as usize) % (image.len() - len + 1);
                    image[dst..dst + len].copy_from_slice(&payload[src..src + len]);
                    manifest.push(DeletedPageRecord { page, payload });
                }

                let report = scan_medium(&image, &geometry, &manifest, window).unwrap();
                let naive = naive_fragments(&image, page_size, &manifest, window);
                assert_eq!(report.fragments, naive, "instance {instance}");
                let recoverable: std::collections::BTreeSet<u64> =
                    naive.iter().map(|f| f.source_page).collect();
                assert_eq!(report.deleted_pages_recoverable, recoverable.len());
            }
        },
    );
}

#[test]
fn acceptance_7_targeted_overwrite_cheaper_than_erase() {
    criterion(
        "criterion 7: targeted overwrite undercuts relocate-and-erase",
        || {
            let p = params();

            // Hand-computed 4-frame ledger. Block of 4: three stale personal
            // frames plus one live non-personal page.
            let build = || {
                let geometry = MediumGeometry::new(PAGE, 8, 4).unwrap();
                let mut dev = NvmDevice::new(geometry, NvmKind::FlashLike, p).unwrap();
                let mut seeder = SplitMix64::new(0xEC00);
                let manifest = write_personal_pages(&mut dev, &mut seeder, 3);
                let keep = SplitMix64::bytes(seeder.next_u64(), PAGE);
                dev.write_page(50, &keep, false).unwrap(); // frame 3
                for page in 0..3 {
                    dev.baseline_delete(page).unwrap();
                }
                (dev, manifest)
            };

            // Overwrite path: clear 3 frames, verify 3 reads, retire 3
            // records. 3*500 + 3*100 + 3*20 = 1860 ns.
            let (mut dev_a, manifest) = build();
            let before = dev_a.ledger().clone();
            let request = DeletionRequest {
                request_id: 1,
                target: DeletionTarget::ByPersonalTag,
                mode: OverwriteMode::Full,
                source: RandomSource::DeviceInternal { seed: 0 },
                verify_window: WINDOW,
            };
            let outcome = run_protocol(&mut dev_a, &request, &manifest);
            assert_eq!(outcome.completion.status, CompletionStatus::Deleted);
            let slice_a = dev_a.ledger().diff(&before).unwrap();
            assert_eq!(slice_a.counters().page_writes, 3);
            assert_eq!(slice_a.counters().page_reads, 3);
            assert_eq!(slice_a.counters().mapping_updates, 3);
            let overwrite_latency = slice_a.total_latency_ns();
            assert_eq!(overwrite_latency, 3.0 * 500.0 + 3.0 * 100.0 + 3.0 * 20.0);

            // Erase path: relocate the one live page (read + write + remap),
            // then erase. 100 + 500 + 20 + 5000 = 5620 ns.
            let (mut dev_b, _) = build();
            let before = dev_b.ledger().clone();
            let relocated = dev_b.erase_block(0).unwrap();
            assert_eq!(relocated, 1);
            let slice_b = dev_b.ledger().diff(&before).unwrap();
            assert_eq!(slice_b.counters().page_reads, 1);
            assert_eq!(slice_b.counters().page_writes, 1);
            assert_eq!(slice_b.counters().mapping_updates, 1);
            assert_eq!(slice_b.counters().block_erases, 1);
            let erase_latency = slice_b.total_latency_ns();
            assert_eq!(erase_latency, 100.0 + 500.0 + 20.0 + 5000.0);

            assert!(overwrite_latency < erase_latency);

            // Both paths sanitize: nothing recoverable either way.
            for dev in [&dev_a, &dev_b] {
                let report =
                    scan_medium(&dev.medium().image(), dev.geometry(), &manifest, WINDOW).unwrap();
                assert_eq!(report.deleted_pages_recoverable, 0);
            }

            // Sweep k = 1..=8 with a block of 8 and no relocations: even a
            // bare erase (5000 ns) loses to k*(500+100+20) = 620k ns.
            for k in 1..=8u64 {
                let geometry = MediumGeometry::new(PAGE, 16, 8).unwrap();
                let mut dev = NvmDevice::new(geometry, NvmKind::FlashLike, p).unwrap();
                let mut seeder = SplitMix64::new(0xEC00 + k);
                let manifest = write_personal_pages(&mut dev, &mut seeder, k);
                for page in 0..k {
                    dev.baseline_delete(page).unwrap();
                }
                let before = dev.ledger().clone();
                let request = DeletionRequest {
                    request_id: 1,
                    target: DeletionTarget::ByPersonalTag,
                    mode: OverwriteMode::Full,
                    source: RandomSource::DeviceInternal { seed: k },
                    verify_window: WINDOW,
                };
                let outcome = run_protocol(&mut dev, &request, &manifest);
                assert_eq!(outcome.completion.status, CompletionStatus::Deleted);
                let overwrite = dev.ledger().diff(&before).unwrap().total_latency_ns();
                assert_eq!(overwrite, 620.0 * k as f64);
                assert!(
                    overwrite < p.erase_latency_ns,
                    "k={k}: {overwrite} !< bare erase {}",
                    p.erase_latency_ns
                );
            }
        },
    );
}

#[test]
fn acceptance_8_byte_identical_reruns() {
    criterion(
        "criterion 8: identical scenario runs produce identical bytes",
        || {
            let config_text = r#"
master_seed = 99

[geometry]
page_size = 64
frame_count = 32
block_size = 4

[cache]
capacity = 4
idle_timeout = 5

[device]
kind = "flash_like"

[scan]
window = 16
"#;
            let trace_text = r#"
{"t":0,"op":"write","page":1,"seed":101,"personal":true}
{"t":1,"op":"write","page":2,"seed":102,"personal":true}
{"t":2,"op":"write","page":3,"seed":103,"personal":false}
{"t":10,"op":"write","page":1,"seed":104,"personal":true}
{"t":11,"op":"read","page":2}
{"t":30,"op":"baseline_delete","page":2}
{"t":31,"op":"privacy_delete","page":1,"mode":{"kind":"full"}}
{"t":32,"op":"privacy_delete","scope":"personal","mode":{"kind":"partial","fraction":{"num":1,"den":2},"layout":"prefix"}}
"#;
            let run = || {
                let config = ScenarioConfig::from_toml(config_text).unwrap();
                let trace = parse_trace(trace_text).unwrap();
                run_scenario(&Scenario { config, trace }).unwrap()
            };
            let a = run();
            let b = run();
            assert_eq!(a.image, b.image, "image bytes");
            let report_a = emit_report(&a.report, ReportFormat::Json).unwrap();
            let report_b = emit_report(&b.report, ReportFormat::Json).unwrap();
            assert_eq!(report_a, report_b, "report bytes");
            let sidecar_a = remsim_core::report::canonical_json(&a.sidecar).unwrap();
            let sidecar_b = remsim_core::report::canonical_json(&b.sidecar).unwrap();
            assert_eq!(sidecar_a, sidecar_b, "sidecar bytes");
            assert_eq!(
                emit_report(&a.report, ReportFormat::Csv).unwrap(),
                emit_report(&b.report, ReportFormat::Csv).unwrap()
            );
        },
    );
}
