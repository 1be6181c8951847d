use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use windgen_cli::{commands, config};
use windgen_core::Error;

/// Stochastic daily wind-speed generator: fit a seasonal + VAR(2) + regional
/// skew-t model to a gridded ensemble and simulate new realizations.
#[derive(Parser)]
#[command(name = "windgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; omitted fields take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// master RNG seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// override a config field by dotted path, e.g. --set wpd.rho=1.2
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit seasonal cycles, the VAR(2), the region partition, and the
    /// per-region skew-t innovations; writes the bundle files
    Fit(Common),
    /// Simulate realizations from a fitted bundle into series.csv
    Simulate(Common),
    /// Emit ACF / QQ / excursion diagnostics comparing reference and
    /// simulated ensembles
    Validate(Common),
    /// Wind-power-density seasonal statistics
    Wpd(Common),
    /// Generate a synthetic ground-truth dataset from a known bundle
    Synth(Common),
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Io { .. }
        | Error::Json { .. }
        | Error::Grid(_)
        | Error::Dimension(_)
        | Error::InvalidArgument(_) => 2,
        Error::Numerical(_)
        | Error::SeasonalFit(_)
        | Error::VarFit(_)
        | Error::SkewTFit(_)
        | Error::Simulation(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&config::RunConfig) -> windgen_core::Result<()>) =
        match &cli.command {
            Command::Fit(c) => (c, commands::cmd_fit),
            Command::Simulate(c) => (c, commands::cmd_simulate),
            Command::Validate(c) => (c, commands::cmd_validate),
            Command::Wpd(c) => (c, commands::cmd_wpd),
            Command::Synth(c) => (c, commands::cmd_synth),
        };
    let cfg = match config::load_config(
        common.config.as_deref(),
        &common.sets,
        common.seed,
        common.out.as_deref(),
    ) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
