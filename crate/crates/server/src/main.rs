use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use surface_sync::config::Config;
use surface_sync::live::{run_live, write_traces};
use surface_sync::server::{replay_journal, start};
use surface_sync_core::checker::{check_consistency, load_traces};
use surface_sync_core::datastore::{Format, Store};
use surface_sync_core::query::{translate, Dialect, QueryText};
use surface_sync_core::replica::Placement;
use surface_sync_core::scenario::{generate, Scenario};
use surface_sync_core::session::SessionDump;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "surface-sync", version, about = "Shared tabletop map + AR session server")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the session server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Re-run a recorded journal offline and print the resulting dump.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Drive a scenario against a running server and record traces.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        /// HTTP `host:port` of the server.
        #[arg(long, default_value = "127.0.0.1:8080")]
        server: String,
        /// Directory for `<actor>.jsonl` traces.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the server dump taken at the end of the run.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Check recorded traces against a server dump. Exits 1 on findings.
    Check {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        dump: PathBuf,
        /// Scenario supplying per-actor calibration.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Translate a query between dialects (reads stdin when TEXT is absent).
    Translate {
        #[arg(long)]
        from: Dialect,
        #[arg(long)]
        to: Dialect,
        text: Option<String>,
    },
    /// Generate a random mixed-workload scenario.
    Generate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 150)]
        events: usize,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .json()
        .flatten_event(true)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Serve { config, replay } => {
            let cfg = Config::load(&config)?;
            if let Some(path) = replay {
                let dump = replay_journal(&cfg, &path)?;
                println!("{}", serde_json::to_string_pretty(&dump)?);
                return Ok(ExitCode::SUCCESS);
            }
            runtime()?.block_on(async {
                let running = start(cfg).await?;
                tokio::signal::ctrl_c().await?;
                running.shutdown().await;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sim { scenario, server, out, dump } => {
            let s = read_scenario(&scenario)?;
            let run = runtime()?.block_on(run_live(&s, &server))?;
            write_traces(&out, &run.traces)?;
            if let Some(p) = dump {
                std::fs::write(&p, serde_json::to_string_pretty(&run.dump)?)?;
            }
            for s in &run.skipped {
                eprintln!("skipped: {s}");
            }
            println!("{} frames recorded in {}", run.traces.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Check { traces, dump, scenario } => {
            let traces = load_traces(&traces)?;
            let dump: SessionDump = serde_json::from_str(&std::fs::read_to_string(&dump)?).context("parsing dump")?;
            let placements: BTreeMap<String, Placement> = match scenario {
                Some(p) => read_scenario(&p)?.actors.into_iter().map(|a| (a.name, a.placement)).collect(),
                None => BTreeMap::new(),
            };
            let report = check_consistency(&traces, &dump, &placements);
            for f in &report.findings {
                println!("{f}");
            }
            println!("{} segments, {} frames, {} findings", report.segments, report.frames, report.findings.len());
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Translate { from, to, text } => {
            let text = match text {
                Some(t) => t,
                None => {
                    let mut s = String::new();
                    std::io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let input = QueryText { dialect: from, text };
            println!("{}", translate(&input, to)?.text);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Generate { seed, events, dataset, format } => {
            let store = Store::ingest(&dataset, format)?;
            println!("{}", generate(seed, events, &store).to_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn read_scenario(path: &PathBuf) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Scenario::from_json(&text)?)
}
