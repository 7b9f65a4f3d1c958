// SPDX-License-Identifier: Apache-2.0

//! `talus`: run simulator scenarios against a persistent TPM state file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use talus_core::flows::InterruptMode;
use talus_core::scenario::{self, Scenario, ScenarioConfig, Status, GUARD_BLOB_FILE};
use talus_core::tpm::pcr::PCR_COUNT;
use talus_core::tpm::{NvKind, TpmDevice, TpmError};
use talus_core::Platform;

const EXIT_CONFIG: u8 = 1;
const EXIT_PROTOCOL: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "talus", version, about = "Enclave CPU and TPM simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, then persist the TPM state.
    Run(RunArgs),
    /// Print PCRs, NV indices and counters held in a state file.
    Inspect {
        #[arg(long)]
        state: Option<PathBuf>,
    },
}

#[derive(Parser)]
struct RunArgs {
    /// Scenario name; may also be given with --scenario.
    #[arg(value_parser = parse_scenario, conflicts_with = "scenario_flag")]
    scenario: Option<Scenario>,
    #[arg(long = "scenario", id = "scenario_flag", value_parser = parse_scenario)]
    scenario_flag: Option<Scenario>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// TPM state file; created when missing. TALUS_STATE takes precedence.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Where to write the JSONL transcript.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pages: usize,
    #[arg(long, default_value_t = 3)]
    threshold: u64,
    #[arg(long, value_enum, default_value_t = Interrupts::None)]
    interrupts: Interrupts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Interrupts {
    None,
    Storm,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = <Scenario as strum::IntoEnumIterator>::iter().map(|s| s.into()).collect();
        format!("unknown scenario '{s}' (expected one of: {})", names.join(", "))
    })
}

/// `TALUS_STATE` wins over `--state`.
fn state_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    std::env::var_os("TALUS_STATE").filter(|v| !v.is_empty()).map(PathBuf::from).or(flag)
}

/// Guard blobs live next to the state file.
fn sidecar(state: &Path) -> PathBuf {
    let mut name = state.as_os_str().to_owned();
    name.push(".sealed");
    PathBuf::from(name)
}

enum Failure {
    Config(anyhow::Error),
    Tpm(TpmError),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn load_platform(seed: u64, state: Option<&Path>) -> Result<Platform, Failure> {
    let Some(path) = state.filter(|p| p.exists()) else {
        return Ok(Platform::new(seed));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut p = Platform::restore(seed, &text).map_err(Failure::Tpm)?;
    let blob = sidecar(path);
    if blob.exists() {
        let bytes = fs::read(&blob).with_context(|| format!("reading {}", blob.display()))?;
        p.os_files.insert(GUARD_BLOB_FILE.into(), bytes);
    }
    Ok(p)
}

fn run(args: RunArgs) -> Result<u8, Failure> {
    let scenario = args.scenario.or(args.scenario_flag).ok_or_else(|| anyhow::anyhow!("no scenario given"))?;
    if args.pages == 0 {
        return Err(anyhow::anyhow!("--pages must be at least 1").into());
    }
    let cfg = ScenarioConfig {
        seed: args.seed,
        pages: args.pages,
        threshold: args.threshold,
        interrupts: match args.interrupts {
            Interrupts::None => InterruptMode::None,
            Interrupts::Storm => InterruptMode::Storm,
        },
    };
    let state = state_path(args.state);
    let mut p = load_platform(cfg.seed, state.as_deref())?;
    let report = scenario::run(&mut p, scenario, &cfg);

    if let Some(path) = &state {
        fs::write(path, p.persist()).with_context(|| format!("writing {}", path.display()))?;
        if let Some(blob) = p.os_files.get(GUARD_BLOB_FILE) {
            let side = sidecar(path);
            fs::write(&side, blob).with_context(|| format!("writing {}", side.display()))?;
        }
    }
    if let Some(path) = &args.transcript {
        fs::write(path, p.bus.transcript().to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(match report.status {
        Status::Ok => 0,
        Status::ProtocolError(_) => EXIT_PROTOCOL,
        Status::SecurityViolation(_) => EXIT_VIOLATION,
    })
}

fn inspect(path: &Path) -> Result<String, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let tpm = TpmDevice::restore(&text).map_err(Failure::Tpm)?;
    let mut out = String::new();
    let _ = writeln!(out, "state  {}", path.display());
    let _ = writeln!(out, "owned  {}", if tpm.is_owned() { "yes" } else { "no" });
    let _ = writeln!(out, "clock  {} ticks", tpm.ticks());
    let bank = tpm.pcr_bank();
    for i in 0..PCR_COUNT {
        let value = bank.values()[i];
        let mark = if value == bank.defaults()[i] { "" } else { "  (extended)" };
        let _ = writeln!(out, "pcr[{i:02}] {}{mark}", value.to_hex());
    }
    for nv in tpm.nv_indices() {
        let _ = match nv.kind {
            NvKind::Counter => {
                writeln!(out, "nv {}  counter = {}  policy {}", nv.index, nv.counter, nv.auth_policy.to_hex())
            }
            NvKind::Data => writeln!(
                out,
                "nv {}  data {}/{} bytes  policy {}",
                nv.index,
                nv.data.len(),
                nv.size,
                nv.auth_policy.to_hex()
            ),
        };
    }
    Ok(out)
}

fn main() -> ExitCode {
    // Exit code 2 is reserved for protocol errors, so usage errors map to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Inspect { state } => match state_path(state) {
            Some(path) => inspect(&path).map(|text| {
                print!("{text}");
                0
            }),
            None => Err(Failure::Config(anyhow::anyhow!("no state file given"))),
        },
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Tpm(e)) => {
            eprintln!("talus: {}", e.code());
            ExitCode::from(EXIT_PROTOCOL)
        }
        Err(Failure::Config(e)) => {
            eprintln!("talus: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
