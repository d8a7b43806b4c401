mod analyze;
mod config;
mod data;
mod output;
mod roles;
mod simulate;
mod source;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Format, Settings};

/// Error caused by how the command was invoked rather than by what it did.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Lab environment monitoring: run nodes, the collector and the query
/// service, simulate laboratories, and analyze what was recorded.
#[derive(Debug, Parser)]
#[command(name = "labnet", version, propagate_version = true)]
pub struct Cli {
    /// Settings file (TOML)
    #[arg(long, global = true, help_heading = "Global options", env = "LABNET_CONFIG", hide_env_values = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a setting, e.g. --set serve.listen=0.0.0.0:8086
    #[arg(long = "set", global = true, help_heading = "Global options", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output format
    #[arg(long, global = true, help_heading = "Global options", value_enum)]
    format: Option<Format>,

    /// More log output (repeat for more)
    #[arg(short, long, global = true, help_heading = "Global options", action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a measurement node agent
    Node(roles::NodeArgs),
    /// Poll registered nodes and forward their points
    Collector(roles::CollectorArgs),
    /// Run storage, the HTTP API and the alert engine
    Serve(roles::ServeArgs),
    /// Run a laboratory scenario through the full pipeline
    Simulate(simulate::SimulateArgs),
    /// Print stored points
    Query(data::QueryArgs),
    /// Correlate, cross-correlate, summarize or take spectra of series
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Write each selected series to its own CSV file
    Export(data::ExportArgs),
    /// Save or restore a consistent copy of the store
    #[command(subcommand)]
    Snapshot(data::SnapshotCommand),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Node(_) => "node",
            Command::Collector(_) => "collector",
            Command::Serve(_) => "serve",
            Command::Simulate(_) => "simulate",
            Command::Query(_) => "query",
            Command::Analyze(_) => "analyze",
            Command::Export(_) => "export",
            Command::Snapshot(_) => "snapshot",
        }
    }
}

/// Where stored data comes from: a local store directory or a running server.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Store directory [default: data_dir setting]
    #[arg(long, value_name = "DIR", conflicts_with = "url")]
    data: Option<PathBuf>,

    /// Query service base URL instead of a local store
    #[arg(long, value_name = "URL")]
    url: Option<String>,

    /// Bearer token for the query service
    #[arg(long, env = "LABNET_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

/// Resolved global options handed to every subcommand.
pub struct Ctx {
    pub settings: Settings,
    pub format: Format,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_logging(cli.verbose);
    let settings = config::load(cli.config.as_deref(), &cli.overrides)?;
    let ctx = Ctx {
        format: cli.format.unwrap_or(settings.format),
        settings,
    };
    match cli.command {
        Command::Node(a) => roles::node(&ctx, a),
        Command::Collector(a) => roles::collector(&ctx, a),
        Command::Serve(a) => roles::serve(&ctx, a),
        Command::Simulate(a) => simulate::run(&ctx, a),
        Command::Query(a) => data::query(&ctx, a),
        Command::Analyze(a) => analyze::run(&ctx, a),
        Command::Export(a) => data::export(&ctx, a),
        Command::Snapshot(a) => data::snapshot(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let sub = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Usage>() {
            Some(u) => {
                eprintln!("error: {u}");
                eprintln!("hint: see 'labnet {sub} --help'");
                ExitCode::from(1)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}
