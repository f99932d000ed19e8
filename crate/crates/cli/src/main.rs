mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Output;
use crate::config::{ConfigError, Defaults, Flags, Settings};

/// Random-access protocol analytics and simulations. Every subcommand
/// writes CSV to `--out` or stdout.
#[derive(Debug, Parser)]
#[command(name = "ralab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tradeoff curves d(r_e) per protocol.
    Dmt,
    /// Expected tree-algorithm epoch length X_k and delivered packets J_k.
    GtaRecursion,
    /// Monte Carlo persistent-outage probabilities beta_k(l) per SNR.
    Beta,
    /// Simulated fully-loaded throughput against the renewal-reward value.
    Throughput,
    /// System error probability across the SNR grid.
    Pe,
    /// Simulated and analytic random-arrival delay across the load grid.
    Delay,
    /// Stability limits per protocol.
    Stability {
        /// Also locate the boundary by simulation over the `--lambda` grid.
        #[arg(long)]
        scan: bool,
    },
}

impl Command {
    fn defaults(&self) -> Defaults {
        match self {
            Command::Delay | Command::Stability { .. } => Defaults {
                snr_db: &[40.0],
                lambda: &[0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8],
            },
            _ => Defaults {
                snr_db: &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
                lambda: &[0.5],
            },
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let settings = Settings::resolve(&cli.flags, &cli.command.defaults())?;
    let mut out = Output::open(&settings)?;
    match &cli.command {
        Command::Dmt => commands::dmt(&settings, &mut out)?,
        Command::GtaRecursion => commands::recursion(&settings, &mut out)?,
        Command::Beta => commands::beta(&settings, &mut out)?,
        Command::Throughput => commands::throughput(&settings, &mut out)?,
        Command::Pe => commands::pe(&settings, &mut out)?,
        Command::Delay => commands::delay(&settings, &mut out)?,
        Command::Stability { scan } => commands::stability(&settings, *scan, &mut out)?,
    }
    out.finish()
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.downcast_ref::<ralab_core::Error>()
                .is_some_and(|e| !matches!(e, ralab_core::Error::WorkerPool(_)))
    })
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        let io = e
            .downcast_ref::<std::io::Error>()
            .or_else(|| match e.downcast_ref::<csv::Error>()?.kind() {
                csv::ErrorKind::Io(io) => Some(io),
                _ => None,
            });
        io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed downstream pipe (`| head`) is not a failure
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
