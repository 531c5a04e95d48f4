use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use odelay::cli::{self, CliError, Flags, OutputFormat, Subcommand};
use odelay::interference::BoundVariant;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Bounds,
    K3,
    Continuity,
    Sector,
    Loop,
    Aux,
    Sweep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Overdrive-delay analysis for constant off-time current-mode control.
#[derive(Debug, Parser)]
#[command(name = "odelay-lab", version)]
struct Args {
    command: Command,
    /// JSON run configuration (not needed for aux).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of random-phase draws for sweep.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    x: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Command-current perturbation for sector.
    #[arg(long)]
    delta: Option<f64>,
    /// Bound on the interference integral: tight, interval or conservative.
    #[arg(long, default_value = "interval")]
    b_variant: BoundVariant,
    /// Run sweep draws on a single thread.
    #[arg(long)]
    sequential: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    let sub = match args.command {
        Command::Simulate => Subcommand::Simulate,
        Command::Bounds => Subcommand::Bounds,
        Command::K3 => Subcommand::K3,
        Command::Continuity => Subcommand::Continuity,
        Command::Sector => Subcommand::Sector,
        Command::Loop => Subcommand::Loop,
        Command::Aux => Subcommand::Aux,
        Command::Sweep => Subcommand::Sweep,
    };
    let cfg = args.config.as_deref().map(cli::parse_config).transpose()?;
    let flags = Flags {
        draws: args.draws,
        seed: args.seed,
        x: args.x,
        mu: args.mu,
        delta: args.delta,
        b_variant: args.b_variant,
        sequential: args.sequential,
    };
    let rows = cli::run_subcommand(sub, cfg.as_ref(), &flags)?;
    let format = match args.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    let text = cli::render(&rows, format);
    match args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odelay-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
