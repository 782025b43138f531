use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chatroom_core::analysis::{analyze, analyze_sessions, SdEstimator};
use chatroom_core::persistence::{export_table, load_sessions, scores_from_csv, ExportFormat};
use chatroom_core::SystemClock;
use chatroom_gateway::config::{BackendSection, ExperimentConfig};
use chatroom_gateway::http::router;
use chatroom_gateway::hub::{random_ids, HubSettings, SessionHub};
use chatroom_gateway::simulate::{load_transcript, pattern_label, simulate};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "chatroom", version, about = "Multi-chatbot chat experiment server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Jsonl => ExportFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sd {
    Sample,
    Population,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP and WebSocket endpoints.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
    /// Run scripted participants against a scripted backend, without network or wall clock.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Bot script; overrides the config's backend.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Descriptive statistics over completed sessions.
    Analyze {
        #[arg(long, required_unless_present = "csv", conflicts_with = "csv")]
        log_dir: Option<PathBuf>,
        /// Analyze a CSV export instead of session logs.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Sd::Sample)]
        sd: Sd,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
    /// One row per completed session.
    Export {
        #[arg(long)]
        log_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new()?;
    match cli.command {
        Command::Serve { config, port, bind } => runtime.block_on(serve(&config, SocketAddr::new(bind, port))),
        Command::Simulate {
            config,
            script,
            transcript,
            out,
        } => runtime.block_on(run_simulation(&config, script.as_deref(), &transcript, &out)),
        Command::Analyze {
            log_dir,
            csv,
            sd,
            format,
        } => {
            let estimator = match sd {
                Sd::Sample => SdEstimator::Sample,
                Sd::Population => SdEstimator::Population,
            };
            let report = match (log_dir, csv) {
                (Some(dir), _) => analyze_sessions(&load_sessions(&dir)?.sessions, estimator)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let (bots, participants) = scores_from_csv(&text)?;
                    let mut organizations: Vec<String> = Vec::new();
                    for choice in participants.iter().filter_map(|p| p.donation_choice.clone()) {
                        if !organizations.contains(&choice) {
                            organizations.push(choice);
                        }
                    }
                    analyze(&participants, &bots, &organizations, estimator)?
                }
                (None, None) => bail!("one of --log-dir or --csv is required"),
            };
            print!(
                "{}",
                match format {
                    ReportFormat::Text => report.to_text(),
                    ReportFormat::Jsonl => report.to_jsonl(),
                }
            );
            Ok(())
        }
        Command::Export { log_dir, format } => {
            let loaded = load_sessions(&log_dir)?;
            for (path, err) in &loaded.skipped {
                eprintln!("skipped {}: {err}", path.display());
            }
            print!("{}", export_table(&loaded.sessions, format.into()));
            Ok(())
        }
    }
}

async fn serve(config_path: &Path, addr: SocketAddr) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    std::fs::create_dir_all(&config.log_dir).with_context(|| format!("creating {}", config.log_dir.display()))?;
    let backend = config.build_backend()?;
    let hub = Arc::new(SessionHub::new(
        HubSettings::from(&config),
        backend,
        config.orchestrator.clone(),
        Arc::new(SystemClock),
        random_ids(),
    ));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, log_dir = %config.log_dir.display(), "listening");
    axum::serve(listener, router(hub)).await?;
    Ok(())
}

async fn run_simulation(config_path: &Path, script: Option<&Path>, transcript: &Path, out: &Path) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(script) = script {
        config.backend = BackendSection::Scripted {
            script: script.to_owned(),
        };
        config.orchestrator.model_id = "scripted".to_owned();
    }
    if !matches!(config.backend, BackendSection::Scripted { .. }) {
        bail!("simulate needs a scripted backend: pass --script or set [backend] kind = \"scripted\"");
    }
    let backend = config.build_backend()?;
    let participants = load_transcript(transcript)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report = simulate(&config, backend, &participants, Some(out)).await?;
    for run in &report.runs {
        let patterns: Vec<String> = run.patterns.iter().map(pattern_label).collect();
        println!("{} {:?} [{}]", run.session.session_id, run.session.phase, patterns.join(", "));
    }
    print!("{}", report.transcript_text());
    Ok(())
}
