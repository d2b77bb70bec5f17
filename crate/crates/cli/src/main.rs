use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridtune_cli::{cmd_analyze, cmd_simulate, cmd_tune};

/// Frequency-domain analysis, structured controller tuning and step-response
/// simulation for droop-controlled grids.
#[derive(Parser)]
#[command(name = "gridtune", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "gridtune.toml")]
    config: PathBuf,

    /// Directory for CSV artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Linear-algebra thread cap (default: library decides).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// error | warn | info | debug | trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Poles, singular-value sweep and worst-case norm.
    Analyze,
    /// Iterative worst-case norm minimization over the tunable parameters.
    Tune,
    /// Linear (and nonlinear) step response with response metrics.
    Simulate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        // OpenBLAS reads this at thread-pool startup.
        std::env::set_var("OPENBLAS_NUM_THREADS", t.to_string());
    }
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();

    let result = match cli.command {
        Command::Analyze => cmd_analyze(&cli.config, &cli.out_dir),
        Command::Tune => cmd_tune(&cli.config, &cli.out_dir),
        Command::Simulate => cmd_simulate(&cli.config, &cli.out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridtune: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
