use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use meshhub::config::HubConfig;
use meshhub::connector::{HttpConnector, HttpFetcher};
use meshhub::harness::{load_script, run_script, seed_fixture, HarnessError, HubClient, Mesh, MeshOptions, Profile};
use meshhub::{Hub, HubError};
use meshhub_core::clock::SystemClock;

#[derive(Parser)]
#[command(name = "meshhub", about = "Metadata hub for a mesh of data repositories")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the hub API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Simulated meshes.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Probe a repository against the five mesh requirements.
    Conformance {
        #[arg(long)]
        repository: String,
        /// A running hub; without it a simulated mesh seeded with
        /// `--profile` is probed.
        #[arg(long)]
        hub: Option<String>,
        #[arg(long, default_value = "tiny")]
        profile: String,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Run a scenario script and print its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Seed a fresh mesh and print its overview statistics.
    Seed {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0}")]
    Other(String),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Serve { config, bind } => serve(config, bind),
        Cmd::Sim { cmd: SimCmd::Run { scenario, seed } } => sim_run(scenario, seed),
        Cmd::Sim { cmd: SimCmd::Seed { profile, data_dir, seed } } => sim_seed(&profile, data_dir, seed),
        Cmd::Conformance { repository, hub, profile } => conformance(&repository, hub, &profile),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn serve(path: PathBuf, bind: Option<String>) -> Result<ExitCode, CliError> {
    let config = HubConfig::load(&path)?;
    let options = config.options()?;
    let timeout = Duration::from_secs(30);
    let hub = Arc::new(Hub::build(
        options,
        Arc::new(SystemClock),
        Arc::new(HttpConnector::new(timeout)),
        Arc::new(HttpFetcher::new(timeout)),
    )?);
    config.apply(&hub)?;
    let addr = bind.unwrap_or_else(|| config.server.bind.clone());
    let interval = Duration::from_secs(config.server.tick_interval_s.max(1));

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Other(format!("bind {addr}: {e}")))?;
        log::info!("listening on {}", listener.local_addr().map_err(|e| CliError::Other(e.to_string()))?);
        let ticker = hub.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(interval);
            loop {
                every.tick().await;
                let h = ticker.clone();
                if let Err(e) = tokio::task::spawn_blocking(move || h.tick()).await {
                    log::error!("background tick panicked: {e}");
                }
            }
        });
        axum::serve(listener, meshhub::api::router(hub))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Other(e.to_string()))
    })?;
    Ok(ExitCode::SUCCESS)
}

fn sim_run(path: PathBuf, seed: Option<u64>) -> Result<ExitCode, CliError> {
    let script = load_script(&path)?;
    let report = run_script(&script, seed)?;
    print_json(&report);
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn sim_seed(profile: &str, data_dir: Option<PathBuf>, seed: Option<u64>) -> Result<ExitCode, CliError> {
    let profile: Profile = profile.parse()?;
    let mut mesh = Mesh::start(MeshOptions { seed, data_dir, in_memory: false })?;
    seed_fixture(&mut mesh, profile)?;
    let stats = mesh.client().get("/stats", None)?;
    print_json(stats.expect_ok()?);
    Ok(ExitCode::SUCCESS)
}

fn conformance(repository: &str, hub: Option<String>, profile: &str) -> Result<ExitCode, CliError> {
    let fetch = |client: &HubClient| -> Result<serde_json::Value, CliError> {
        let reply = client.get(&format!("/repositories/{repository}/conformance"), None)?;
        Ok(reply.expect_ok()?.clone())
    };
    let report = match hub {
        Some(url) => fetch(&HubClient::new(&url))?,
        None => {
            let mut mesh = Mesh::start(MeshOptions { in_memory: true, ..MeshOptions::default() })?;
            seed_fixture(&mut mesh, profile.parse()?)?;
            fetch(mesh.client())?
        }
    };
    print_json(&report);
    let failed = report["checks"]
        .as_array()
        .into_iter()
        .flatten()
        .any(|c| c["outcome"] == "fail");
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}
