//! Command-line front end.
//!
//! Exit codes: 0 success, 1 bad input (unreadable or invalid scenario,
//! usage error, corrupt ledger), 2 the trace auditor found a violation.
//! Every error line on stderr starts with `error[<kind>]:`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::payment::{audit_log, read_log};
use crate::pof::{bench_pof, BenchRow, SigningMode};
use crate::simnet::{self, PaymentMode, Scenario, ScenarioError, SimOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

/// Directory searched for relative scenario paths that do not exist as given.
pub const SCENARIO_DIR_ENV: &str = "R2P2_SCENARIO_DIR";

#[derive(Debug, Parser)]
#[command(name = "r2p2", version, about = "Scenario runner for the r2p2 forwarding simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Repeat for more detail on stderr (-v summary, -vv full trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file; relative names are also looked up in $R2P2_SCENARIO_DIR.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory (run, compare-payment) or file (dump-state).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and print its metrics report.
    Run(ScenarioArgs),
    /// Parse and validate a scenario without running it.
    Validate(ScenarioArgs),
    /// Run a scenario and print every node's final table state.
    DumpState(ScenarioArgs),
    /// Check a settled ledger log for token conservation.
    AuditLedger {
        /// NDJSON ledger log to audit.
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        ledger: Option<PathBuf>,
        /// Run this scenario and audit the ledger it produces.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Count signing and verification operations per signing mode.
    BenchPof {
        #[arg(long, default_value_t = 1500)]
        packet_size: u64,
        #[arg(long, default_value_t = 2 * 1024 * 1024)]
        content_bytes: u64,
        /// Packets per signed chunk; repeatable.
        #[arg(long = "chunk", default_values_t = [1u64, 4, 16, 64])]
        chunks: Vec<u64>,
        #[arg(long, default_value_t = 3)]
        hops: u8,
        /// Also write the table as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario under pay-all and hop-by-hop payment and compare ledgers.
    ComparePayment(ScenarioArgs),
}

#[derive(Debug)]
enum Failure {
    Invalid(String, String),
    Violation(Vec<String>),
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Invalid("io".into(), format!("{}: {e}", path.display()))
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Invalid("io".into(), e.to_string()),
            ScenarioError::Parse(m) => Failure::Invalid("parse".into(), m),
            ScenarioError::Invalid(errs) => Failure::Invalid("validation".into(), errs.join("; ")),
        }
    }
}

/// Row of the payment-mode comparison.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct PaymentModeRow {
    pub mode: String,
    pub channels_opened: usize,
    pub settlements: usize,
    pub updates: usize,
    pub flows_completed: usize,
    pub violations: usize,
}

/// Runs `scenario` once per payment mode.
pub fn compare_payment(scenario: &Scenario) -> Result<Vec<PaymentModeRow>, ScenarioError> {
    [PaymentMode::PayAll, PaymentMode::HopByHop]
        .into_iter()
        .map(|mode| {
            let mut sc = scenario.clone();
            sc.defaults.payment_mode = mode;
            let out = simnet::run(&sc)?;
            let l = &out.report.ledger;
            Ok(PaymentModeRow {
                mode: mode.as_str().to_string(),
                channels_opened: l.channels_opened,
                settlements: l.settlements,
                updates: l.updates,
                flows_completed: out.report.flows.iter().filter(|f| f.completed()).count(),
                violations: out.report.violations.len(),
            })
        })
        .collect()
}

pub fn resolve_scenario(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(SCENARIO_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut sc = Scenario::load(&resolve_scenario(path))?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn check_violations(out: &SimOutput) -> Result<(), Failure> {
    if out.report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violation(
            out.report
                .violations
                .iter()
                .map(|v| format!("{}: {}", v.rule, v.detail))
                .collect(),
        ))
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error[usage]: {first}");
            return EXIT_INVALID;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(kind, msg)) => {
            let _ = writeln!(stderr, "error[{kind}]: {msg}");
            EXIT_INVALID
        }
        Err(Failure::Violation(vs)) => {
            for v in vs {
                let _ = writeln!(stderr, "error[violation]: {v}");
            }
            EXIT_VIOLATION
        }
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let verbose = cli.verbose;
    let out_err = |e: std::io::Error| Failure::Invalid("io".into(), format!("stdout: {e}"));
    match &cli.command {
        Command::Validate(a) => {
            let sc = load(&a.scenario, a.seed)?;
            writeln!(
                stdout,
                "ok {}: {} nodes, {} links, {} content, {} schedule entries",
                sc.name,
                sc.nodes.len(),
                sc.links.len(),
                sc.content.len(),
                sc.schedule.len()
            )
            .map_err(out_err)?;
        }
        Command::Run(a) => {
            let sc = load(&a.scenario, a.seed)?;
            let out = simnet::run(&sc)?;
            if verbose >= 2 {
                let _ = stderr.write_all(out.trace_ndjson().as_bytes());
            }
            if verbose >= 1 {
                for f in &out.report.flows {
                    let _ = writeln!(
                        stderr,
                        "flow {} {}: {}/{} chunks, retries {}, {}",
                        f.node,
                        f.prefix,
                        f.chunks_done,
                        f.chunks_total,
                        f.retries,
                        f.failed.as_deref().unwrap_or("ok")
                    );
                }
            }
            let json = out.report.to_json();
            writeln!(stdout, "{json}").map_err(out_err)?;
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
                write_file(&dir.join("report.json"), &format!("{json}\n"))?;
                write_file(&dir.join("trace.ndjson"), &out.trace_ndjson())?;
                write_file(&dir.join("ledger.ndjson"), &out.ledger_ndjson())?;
                write_file(&dir.join("state.txt"), &(out.state.join("\n") + "\n"))?;
            }
            check_violations(&out)?;
        }
        Command::DumpState(a) => {
            let sc = load(&a.scenario, a.seed)?;
            let out = simnet::run(&sc)?;
            let text = out.state.join("\n") + "\n";
            stdout.write_all(text.as_bytes()).map_err(out_err)?;
            if let Some(p) = &a.out {
                write_file(p, &text)?;
            }
            check_violations(&out)?;
        }
        Command::AuditLedger { ledger, scenario, seed } => {
            let records = match (ledger, scenario) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
                    read_log(text.as_bytes()).map_err(|e| Failure::Invalid("ledger".into(), e))?
                }
                (None, Some(s)) => simnet::run(&load(s, *seed)?)?.ledger_log,
                (None, None) => unreachable!("clap requires one source"),
            };
            match audit_log(&records) {
                Ok(s) if s.final_total == s.minted => {
                    writeln!(
                        stdout,
                        "ok: {} records, {} channels, {} updates, {} settlements, {} tokens conserved",
                        s.records, s.channels_opened, s.updates, s.settlements, s.minted
                    )
                    .map_err(out_err)?;
                }
                Ok(s) => {
                    return Err(Failure::Violation(vec![format!(
                        "token_conservation: final total {} differs from minted {}",
                        s.final_total, s.minted
                    )]))
                }
                Err(e) => return Err(Failure::Violation(vec![format!("token_conservation: {e}")])),
            }
        }
        Command::BenchPof {
            packet_size,
            content_bytes,
            chunks,
            hops,
            out,
        } => {
            if *packet_size == 0 || *hops == 0 || chunks.contains(&0) {
                return Err(Failure::Invalid(
                    "usage".into(),
                    "packet size, hops and chunk sizes must be positive".into(),
                ));
            }
            let rows = bench_table(*content_bytes, *packet_size, chunks, *hops);
            write_bench(stdout, &rows).map_err(out_err)?;
            if let Some(p) = out {
                write_file(p, &serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
            }
        }
        Command::ComparePayment(a) => {
            let sc = load(&a.scenario, a.seed)?;
            let rows = compare_payment(&sc)?;
            writeln!(
                stdout,
                "{:<12} {:>16} {:>12} {:>8} {:>16} {:>11}",
                "mode", "channels_opened", "settlements", "updates", "flows_completed", "violations"
            )
            .map_err(out_err)?;
            for r in &rows {
                writeln!(
                    stdout,
                    "{:<12} {:>16} {:>12} {:>8} {:>16} {:>11}",
                    r.mode, r.channels_opened, r.settlements, r.updates, r.flows_completed, r.violations
                )
                .map_err(out_err)?;
            }
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
                let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
                write_file(&dir.join("compare-payment.json"), &json)?;
            }
            if rows.iter().any(|r| r.violations > 0) {
                return Err(Failure::Violation(vec![
                    "compare-payment: a run reported auditor violations".into(),
                ]));
            }
        }
    }
    Ok(())
}

/// Packet-level row followed by one chunk-level row per entry of `chunks`.
pub fn bench_table(content_bytes: u64, packet_size: u64, chunks: &[u64], hops: u8) -> Vec<BenchRow> {
    std::iter::once(SigningMode::PacketLevel)
        .chain(chunks.iter().map(|&n| SigningMode::ChunkLevel(n)))
        .map(|m| bench_pof(content_bytes, packet_size, m, hops))
        .collect()
}

fn write_bench(w: &mut dyn Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<10} {:>8} {:>8} {:>5} {:>11} {:>14} {:>10}",
        "mode", "packets", "units", "hops", "signatures", "verifications", "reduction"
    )?;
    let base = rows.first().map_or(1, |r| r.signatures.max(1));
    for r in rows {
        let reduction = base as f64 / r.signatures.max(1) as f64;
        writeln!(
            w,
            "{:<10} {:>8} {:>8} {:>5} {:>11} {:>14} {:>9.2}x",
            r.mode, r.packets, r.units, r.hops, r.signatures, r.verifications, reduction
        )?;
    }
    Ok(())
}
