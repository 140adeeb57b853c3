use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use regenscatter::{selftest::Hooks, CalibrateArgs, CliError, GoertzelArgs, SweepArgs};
use regenscatter_core::link::LinkKind;

#[derive(Parser)]
#[command(
    name = "regenscatter",
    version,
    about = "Link sweeps and model calibration for a regenerative mmWave backscatter tag"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Link {
    Down,
    Up,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo BER sweep over the grid in the config; writes CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        link: Link,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results are identical for any value.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit free model parameters to the config's anchors; writes a model file.
    Calibrate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Goertzel magnitude of one bin of a sample file (one value per line).
    Goertzel {
        #[arg(long)]
        freq: f64,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        n: usize,
        input: PathBuf,
    },
    /// Run the built-in invariant checks.
    Selftest {
        #[arg(long, hide = true)]
        corrupt_goertzel: bool,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let mut out = io::stdout().lock();
    let mut err = io::stderr();
    match cli.command {
        Command::Sweep {
            config,
            out: path,
            link,
            seed,
            threads,
        } => {
            let link = match link {
                Link::Down => LinkKind::Downlink,
                Link::Up => LinkKind::Uplink,
            };
            regenscatter::cmd_sweep(
                &SweepArgs {
                    config: &config,
                    out: path.as_deref(),
                    link,
                    seed,
                    threads,
                },
                &mut out,
                &mut err,
            )
        }
        Command::Calibrate {
            config,
            out: path,
            seed,
        } => regenscatter::cmd_calibrate(
            &CalibrateArgs {
                config: &config,
                out: path.as_deref(),
                seed,
            },
            &mut out,
        ),
        Command::Goertzel {
            freq,
            rate,
            n,
            input,
        } => regenscatter::cmd_goertzel(
            &GoertzelArgs {
                freq,
                rate,
                n,
                input: &input,
            },
            &mut out,
        ),
        Command::Selftest { corrupt_goertzel } => {
            let hooks = Hooks {
                goertzel_coeff_skew: if corrupt_goertzel { 1e-3 } else { 0.0 },
            };
            Ok(regenscatter::cmd_selftest(hooks, &mut out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            e.code
        }
    };
    ExitCode::from(code)
}
