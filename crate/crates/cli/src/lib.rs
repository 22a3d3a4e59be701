//! `qphi` command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Format, PlotKind};
use crate::error::{CliError, Status};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "qphi", version, about = "Charge-flux analysis of memristor reset sweeps")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "qphi-out")]
    pub out: PathBuf,
    /// Random seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate trace files.
    Ingest { inputs: Vec<PathBuf> },
    /// Extract reset points.
    Extract { inputs: Vec<PathBuf> },
    /// Extract reset points and fit model parameters.
    Fit { inputs: Vec<PathBuf> },
    /// Statistics of fitted ensembles.
    Stats { inputs: Vec<PathBuf> },
    /// Simulate one trace.
    Simulate,
    /// Simulate an ensemble of traces with sampled parameters.
    Montecarlo { inputs: Vec<PathBuf> },
    /// Render an SVG plot.
    Plot {
        #[arg(value_enum)]
        kind: PlotKind,
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Ingest { .. } => "ingest",
            Self::Extract { .. } => "extract",
            Self::Fit { .. } => "fit",
            Self::Stats { .. } => "stats",
            Self::Simulate => "simulate",
            Self::Montecarlo { .. } => "montecarlo",
            Self::Plot { .. } => "plot",
        }
    }

    fn inputs(&self) -> &[PathBuf] {
        match self {
            Self::Ingest { inputs }
            | Self::Extract { inputs }
            | Self::Fit { inputs }
            | Self::Stats { inputs }
            | Self::Montecarlo { inputs }
            | Self::Plot { inputs, .. } => inputs,
            Self::Simulate => &[],
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<Status, CliError> {
    let file = match &cli.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            config::parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    let overrides = cli.set.iter().map(|s| config::parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    let settings = config::resolve(&file, &overrides, cli.seed)?;

    std::fs::create_dir_all(&cli.out).map_err(CliError::io(format!("creating {}", cli.out.display())))?;
    let manifest = RunManifest {
        tool: "qphi".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        inputs: cli.command.inputs().iter().map(|p| p.display().to_string()).collect(),
        config_file: cli.config.as_ref().map(|p| p.display().to_string()),
        overrides,
        config: settings.values.clone(),
        seed: settings.sim.seed,
        out_dir: cli.out.display().to_string(),
    };
    manifest.write(&cli.out)?;

    let out = cli.out.as_path();
    match &cli.command {
        Command::Ingest { inputs } => commands::cmd_ingest(inputs, &settings, out, cli.format),
        Command::Extract { inputs } => commands::cmd_extract(inputs, &settings, out, cli.format),
        Command::Fit { inputs } => commands::cmd_fit(inputs, &settings, out, cli.format),
        Command::Stats { inputs } => commands::cmd_stats(inputs, out, cli.format),
        Command::Simulate => commands::cmd_simulate(&settings, out),
        Command::Montecarlo { inputs } => commands::cmd_montecarlo(inputs, &settings, out),
        Command::Plot { kind, inputs } => commands::cmd_plot(*kind, inputs, &settings, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 when everything succeeded, 1 on partial or runtime failure, 2 on a
/// usage or config error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(Status::Success) => 0,
        Ok(Status::Partial) => {
            eprintln!("qphi {}: some cycles failed, see {}", cli.command.name(), cli.out.display());
            1
        }
        Err(e) => {
            eprintln!("qphi {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
