use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use datacube::localization::{completeness_check, TranslationTable};
use datacube::sim::{run_scenario, Scenario};
use datacube_cli::serve::{self, ServeConfig, ServeError};
use datacube_cli::{loopback, tools};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "datacube", version, about = "Collaborative DataCube session server and tools")]
struct Cli {
    /// Translation table (TSV: key, language, text) replacing the bundled one
    #[arg(long, global = true, value_name = "TSV")]
    lang_table: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session server (TCP, WebSocket + web UI, UDP discovery)
    Serve(ServeArgs),
    /// Run a scripted multi-client session and check convergence
    Simulate(SimulateArgs),
    /// Check a CSV file against the dataset format
    Validate {
        csv: PathBuf,
    },
    /// Write a filtered dataset subset, or a scenario's session artifacts
    Export(ExportArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// TOML file with server settings; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bind: Option<std::net::IpAddr>,
    /// TCP port (0 picks a free port)
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    ws_port: Option<u16>,
    #[arg(long)]
    discovery_port: Option<u16>,
    /// Where session artifacts are written on shutdown
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Dataset CSV; a synthetic population is generated when absent
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    individuals: Option<usize>,
    /// Maximum number of participants (observers are not counted)
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    session_id: Option<String>,
    /// Directory served under /ui
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Run over loopback TCP/UDP instead of the simulated network
    #[arg(long)]
    real_sockets: bool,
    /// Also write the report to this file
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Source dataset; a synthetic population is generated when absent
    #[arg(long, conflicts_with = "scenario")]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    individuals: usize,
    /// Year filter, LO:HI
    #[arg(long)]
    years: Option<String>,
    /// Numeric filter, COLUMN:LO:HI (repeatable)
    #[arg(long = "range")]
    ranges: Vec<String>,
    /// Comma-separated region codes
    #[arg(long)]
    regions: Option<String>,
    /// Output file (stdout when absent)
    #[arg(long, conflicts_with = "scenario")]
    out: Option<PathBuf>,
    /// Simulate this scenario and write its snapshots and watchlist
    #[arg(long, requires = "out_dir")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn usage(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_USAGE)
}

fn failed(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message:#}");
    ExitCode::from(EXIT_FAILED)
}

fn serve_config(args: ServeArgs, lang_table: Option<PathBuf>) -> Result<ServeConfig, ServeError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ServeError::BadConfig(format!("{}: {e}", path.display())))?;
            ServeConfig::from_toml(&text)?
        }
        None => ServeConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { config.$field = v; })*
        };
    }
    apply!(bind, port, ws_port, discovery_port, data_dir, seed, individuals, capacity);
    config.dataset = args.dataset.or(config.dataset);
    config.session_id = args.session_id.or(config.session_id);
    config.ui_dir = args.ui_dir.or(config.ui_dir);
    config.lang_table = lang_table.or(config.lang_table);
    Ok(config)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

async fn cmd_serve(args: ServeArgs, lang_table: Option<PathBuf>) -> ExitCode {
    let config = match serve_config(args, lang_table) {
        Ok(config) => config,
        Err(e) => return usage(e),
    };
    let data_dir = config.data_dir.clone();
    let handle = match serve::start(config).await {
        Ok(handle) => handle,
        Err(e @ ServeError::BadConfig(_)) => return usage(e),
        Err(e) => return failed(e),
    };
    println!("session {}", handle.session_id);
    println!("tcp {}", handle.tcp_addr);
    println!("websocket {}", handle.ws_addr);
    println!("discovery {}", handle.discovery_addr);
    shutdown_signal().await;
    log::info!("shutting down");
    match handle.shutdown().await {
        Ok(summary) => {
            println!("artifacts {}", summary.session_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => failed(format!("persisting artifacts under {}: {e}", data_dir.display())),
    }
}

fn load_scenario(path: &PathBuf, seed: Option<u64>) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut scenario = Scenario::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    scenario.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(scenario)
}

async fn cmd_simulate(args: SimulateArgs) -> ExitCode {
    let scenario = match load_scenario(&args.scenario, args.seed) {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let report = if args.real_sockets {
        let dir = std::env::temp_dir().join(format!("datacube-loopback-{}", std::process::id()));
        let result = loopback::run_over_sockets(&scenario, &dir).await;
        let _ = std::fs::remove_dir_all(&dir);
        match result {
            Ok(report) => report,
            Err(e @ ServeError::BadConfig(_)) => return usage(e),
            Err(e) => return failed(e),
        }
    } else {
        run_scenario(&scenario)
    };
    let text = report.render();
    print!("{text}");
    if let Some(path) = &args.report {
        if let Err(e) = std::fs::write(path, &text) {
            return failed(format!("{}: {e}", path.display()));
        }
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<ExitCode> {
    if let (Some(path), Some(out_dir)) = (&args.scenario, &args.out_dir) {
        let scenario = match load_scenario(path, None) {
            Ok(s) => s,
            Err(e) => return Ok(usage(e)),
        };
        let (report, summary) = tools::export_scenario_artifacts(scenario, out_dir)?;
        println!(
            "{} snapshot(s) and {} written under {}",
            summary.snapshot_files.len(),
            summary.watchlist_file.display(),
            summary.session_dir.display()
        );
        return Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILED) });
    }
    let dataset = tools::load_or_generate(args.dataset.as_deref(), args.seed, args.individuals)?;
    let filter = match tools::build_filter(args.years.as_deref(), &args.ranges, args.regions.as_deref()) {
        Ok(f) => f,
        Err(e) => return Ok(usage(e)),
    };
    let text = tools::export_subset(&dataset, &filter)?;
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn check_lang_table(path: &PathBuf) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table = TranslationTable::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    for (key, lang) in completeness_check(&table) {
        log::warn!("translation table lacks `{key}` for {lang}");
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(path) = &cli.lang_table {
        if let Err(e) = check_lang_table(path) {
            return usage(e);
        }
    }
    match cli.command {
        Command::Serve(args) => cmd_serve(args, cli.lang_table).await,
        Command::Simulate(args) => cmd_simulate(args).await,
        Command::Validate { csv } => match tools::validate_file(&csv) {
            Ok((text, valid)) => {
                print!("{text}");
                if valid { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILED) }
            }
            Err(e) => failed(e),
        },
        Command::Export(args) => cmd_export(args).unwrap_or_else(failed),
    }
}
