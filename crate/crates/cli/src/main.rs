use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use flab_cli::{parse_config, run, Command};

/// Poincaré certificates, spectral gaps, dynamics and simulation for
/// B-scheme Fokker-Planck lattices.
///
/// Exit status: 0 on success, 2 when the run completed but the certificate
/// or screening came out negative, 1 on errors.
#[derive(Parser)]
#[command(name = "flab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (INI-like).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation seed; overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap would exit with 2, which is reserved for negative results.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    if let Some(dir) = cli.out {
        cfg.outputs.dir = dir;
    }
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    match run(cli.command, &cfg, cli.quiet) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(1)
        }
    }
}
