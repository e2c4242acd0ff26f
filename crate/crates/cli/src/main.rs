mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;

#[derive(Parser)]
#[command(name = "qnoise", version, about = "Correlated dephasing noise injection and spectroscopy")]
struct Cli {
    /// Master seed; overrides the `seed` key of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that receives all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// TOML config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Also write long-format CSV (`series,x,y,lo,hi`) for external plotting.
    #[arg(long, global = true)]
    emit_plot_data: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design an ARMA model from a target spectrum; writes the model and its PSD.
    Design,
    /// Simulate sequence survivals under injected (and native) noise.
    Simulate,
    /// Reconstruct the noise spectrum from survival records.
    Reconstruct,
    /// Fit native-noise and pulse-error parameters with the injected spectrum held fixed.
    Fit,
    /// Export OpenQASM 2.0 circuits, one per sequence and trajectory.
    ExportCircuits,
    /// Validate and normalize measured results.
    #[command(after_help = format!("Output columns: {}", commands::records_schema()))]
    Ingest,
    /// Summarize records, spectra and fits.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config <FILE> is required");
        return ExitCode::from(2);
    };
    let ctx = Context { config, out_dir: cli.out_dir, seed: cli.seed, emit_plot_data: cli.emit_plot_data };
    let result = match cli.command {
        Command::Design => commands::design(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Reconstruct => commands::reconstruct(&ctx),
        Command::Fit => commands::fit_cmd(&ctx),
        Command::ExportCircuits => commands::export(&ctx),
        Command::Ingest => commands::ingest(&ctx),
        Command::Report => commands::report(&ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
