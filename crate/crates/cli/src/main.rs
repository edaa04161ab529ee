//! remsim: run hybrid-memory deletion scenarios, scan medium images for
//! remanence, and re-emit run reports.
//!
//! Exit codes: 0 success, 2 parse/config error, 3 runtime simulation error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use remsim_core::forensics::DeletedPageRecord;
use remsim_core::report::{canonical_json, emit_report, ReportFormat};
use remsim_core::scenario::{run_scenario, RunOutput, Scenario, ScenarioConfig, SimError};
use remsim_core::trace::parse_trace;
use remsim_core::MediumSidecar;

const EXIT_INPUT: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "remsim", version, about = "hybrid DRAM+NVM remanence simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario: replay a trace against a configured memory system
    /// and write report.json, image.bin and image.meta.json.
    Simulate {
        /// Scenario config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Trace file (JSON Lines)
        #[arg(long)]
        trace: PathBuf,
        /// Master seed; overrides the config's master_seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan a raw medium image for fragments of deleted payloads.
    Scan {
        /// Raw image file; geometry is read from the sidecar
        /// <image>.meta.json (or --meta)
        #[arg(long)]
        image: PathBuf,
        /// Manifest of deleted pages (JSON)
        #[arg(long)]
        manifest: PathBuf,
        /// Fragment window in bytes
        #[arg(long, default_value_t = remsim_core::scenario::DEFAULT_SCAN_WINDOW)]
        window: usize,
        /// Sidecar metadata path when it does not sit next to the image
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Report destination
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit a run report from a simulate output directory.
    Report {
        /// Directory holding report.json
        #[arg(long = "in")]
        input: PathBuf,
        /// Output format: json or csv
        #[arg(long)]
        format: String,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("remsim: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn input_err(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn runtime_err(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: message.into(),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            trace,
            seed,
            out,
        } => simulate(&config, &trace, seed, &out),
        Command::Scan {
            image,
            manifest,
            window,
            meta,
            out,
        } => scan(&image, &manifest, window, meta.as_deref(), &out),
        Command::Report { input, format } => report(&input, &format),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))
}

fn write_outputs(dir: &Path, output: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", dir.display())))?;
    let report_bytes =
        emit_report(&output.report, ReportFormat::Json).map_err(|e| runtime_err(e.to_string()))?;
    write_file(&dir.join("report.json"), &report_bytes)?;
    write_file(&dir.join("image.bin"), &output.image)?;
    let sidecar = canonical_json(&output.sidecar).map_err(|e| runtime_err(e.to_string()))?;
    write_file(&dir.join("image.meta.json"), &sidecar)?;
    Ok(())
}

fn simulate(
    config_path: &Path,
    trace_path: &Path,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let mut config = ScenarioConfig::from_toml(&read_text(config_path)?)
        .map_err(|e| input_err(e.to_string()))?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    let trace = parse_trace(&read_text(trace_path)?).map_err(|e| input_err(e.to_string()))?;

    match run_scenario(&Scenario { config, trace }) {
        Ok(output) => {
            write_outputs(out_dir, &output)?;
            println!(
                "simulated {} records: remanence rate {}, {} completion(s), artifacts in {}",
                output.report.records_applied,
                output.report.remanence.remanence_rate,
                output.report.completions.len(),
                out_dir.display()
            );
            Ok(())
        }
        Err(SimError::Aborted {
            line,
            reason,
            partial,
        }) => {
            // Partial artifacts still land on disk for debugging.
            write_outputs(out_dir, &partial)?;
            Err(runtime_err(format!(
                "aborted at trace line {line}: {reason} (partial artifacts in {})",
                out_dir.display()
            )))
        }
        Err(e @ SimError::Config(_)) => Err(input_err(e.to_string())),
        Err(e) => Err(runtime_err(e.to_string())),
    }
}

fn sidecar_path_for(image: &Path) -> PathBuf {
    image.with_extension("meta.json")
}

fn scan(
    image_path: &Path,
    manifest_path: &Path,
    window: usize,
    meta: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let image = read(image_path)?;
    let meta_path = meta
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar_path_for(image_path));
    let sidecar: MediumSidecar = serde_json::from_slice(&read(&meta_path)?)
        .map_err(|e| input_err(format!("bad sidecar {}: {e}", meta_path.display())))?;
    let manifest: Vec<DeletedPageRecord> = serde_json::from_slice(&read(manifest_path)?)
        .map_err(|e| input_err(format!("bad manifest {}: {e}", manifest_path.display())))?;

    let report = remsim_core::scan_medium(&image, &sidecar.geometry, &manifest, window)
        .map_err(|e| input_err(e.to_string()))?;
    let bytes = canonical_json(&report).map_err(|e| runtime_err(e.to_string()))?;
    write_file(out, &bytes)?;
    println!(
        "scanned {} frames: {}/{} deleted pages recoverable, {} fragment(s)",
        report.scanned_frames,
        report.deleted_pages_recoverable,
        report.deleted_pages_total,
        report.fragments.len()
    );
    Ok(())
}

fn report(input_dir: &Path, format: &str) -> Result<(), CliError> {
    let format: ReportFormat = format.parse().map_err(|e: remsim_core::ReportError| {
        input_err(e.to_string())
    })?;
    let path = input_dir.join("report.json");
    let report: remsim_core::RunReport = serde_json::from_slice(&read(&path)?)
        .map_err(|e| input_err(format!("bad report {}: {e}", path.display())))?;
    let bytes = emit_report(&report, format).map_err(|e| runtime_err(e.to_string()))?;
    let mut stdout = std::io::stdout().lock();
    use std::io::Write;
    stdout
        .write_all(&bytes)
        .map_err(|e| runtime_err(e.to_string()))?;
    Ok(())
}
