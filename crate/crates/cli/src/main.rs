mod remote;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use homewatch_core::centre::Centre;
use homewatch_core::config::{DeploymentConfig, CONFIG_ENV};
use homewatch_core::sim::{self, CohortSpec, InProcess, Mix, ReportFormat, SimError};
use homewatch_core::store::export::{export, ExportFormat};
use homewatch_core::store::{EventStore, FileStorage};
use homewatch_server::{spawn_loopback, AppState, Clock};

/// Exit status when a simulation finishes with a failed invariant.
const INVARIANT_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "homewatch", version, about = "Remote monitoring Command Centre")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Deployment configuration; defaults to $HOMEWATCH_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a synthetic cohort and report the automated/human workload split.
    Simulate(SimulateArgs),
    /// Write a pseudonymized slice of the event log.
    Export {
        /// Event log to read; defaults to the one named by the configuration.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        from: u64,
        #[arg(long, default_value_t = u64::MAX)]
        to: u64,
        #[arg(long, default_value = "jsonl")]
        format: ExportFormat,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    patients: u32,
    #[arg(long)]
    days: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// e.g. stable=0.3,deteriorating=0.1,quarantine=0.05,nonresponder=0.1
    #[arg(long, default_value = "")]
    mix: Mix,
    #[arg(long, default_value_t = 2)]
    reports_per_day: u32,
    /// Daily probability that a patient calls the centre.
    #[arg(long, default_value_t = 0.0)]
    contact_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    skip_prob: f64,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Base URL of a server running on a manual clock. Without it a private
    /// server is started on a loopback port and driven over HTTP.
    #[arg(long, conflicts_with = "in_process")]
    endpoint: Option<String>,
    /// Call the centre directly instead of through the HTTP API.
    #[arg(long)]
    in_process: bool,
    /// Operator token for --endpoint; defaults to $HOMEWATCH_OPERATOR_TOKEN.
    #[arg(long, env = "HOMEWATCH_OPERATOR_TOKEN", hide_env_values = true)]
    operator_token: Option<String>,
}

fn load_config(path: Option<PathBuf>) -> Result<DeploymentConfig> {
    let path = match path.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
        Some(p) => p,
        None => bail!("no configuration: pass --config or set {CONFIG_ENV}"),
    };
    Ok(DeploymentConfig::load(&path)?)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Operator token for a private loopback server.
fn loopback_token() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let spec = CohortSpec {
        reports_per_day: a.reports_per_day,
        contact_rate_per_day: a.contact_rate,
        nonresponder_skip_prob: a.skip_prob,
        ..CohortSpec::new(a.patients, a.days, a.seed, a.mix)
    };
    let result = match &a.endpoint {
        Some(url) => {
            let Some(token) = a.operator_token.as_deref() else {
                bail!("--endpoint needs --operator-token or HOMEWATCH_OPERATOR_TOKEN");
            };
            sim::run(&spec, &mut remote::Remote::new(url, token))
        }
        None if a.in_process => sim::run(&spec, &mut InProcess::new()),
        None => {
            let token = loopback_token();
            let state = AppState::new(Centre::in_memory(), Clock::Manual(Mutex::new(sim::sim_epoch())), token.clone());
            let (addr, _server) = spawn_loopback(state.clone()).context("starting loopback server")?;
            sim::run(&spec, &mut remote::Remote::new(&format!("http://{addr}"), &token).with_local(state))
        }
    };
    let (report, code) = match result {
        Ok(r) => (r, ExitCode::SUCCESS),
        Err(SimError::InvariantViolated { at, failures, report }) => {
            eprintln!("invariant violated at {at}:");
            for f in &failures {
                eprintln!("  {f}");
            }
            match report {
                Some(r) => (*r, ExitCode::from(INVARIANT_FAILURE)),
                None => return Ok(ExitCode::from(INVARIANT_FAILURE)),
            }
        }
        Err(e) => return Err(e.into()),
    };
    let mut out = output(a.out.as_deref())?;
    out.write_all(sim::render(&report, a.format).as_bytes())?;
    out.flush()?;
    Ok(code)
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Serve { config } => {
            let cfg = load_config(config)?;
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(homewatch_server::serve(cfg))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => simulate(args),
        Command::Export { log, config, from, to, format, out } => {
            let log = match log {
                Some(l) => l,
                None => load_config(config)?.event_log,
            };
            if from > to {
                bail!("--from {from} is after --to {to}");
            }
            let storage = FileStorage::open(&log, false).with_context(|| format!("opening {}", log.display()))?;
            let store = EventStore::open(Box::new(storage))?;
            let mut w = output(out.as_deref())?;
            let rows = export(&store, from..=to, format, &mut w)?;
            w.flush()?;
            eprintln!("exported {rows} events");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
