//! Batch front-end for the passive bistatic radar toolkit.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 1 anything else (I/O and such).

use clap::{Parser, Subcommand, ValueEnum};
use pbr_cli::commands::{self, Canceller};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pbr", version, about = "Passive bistatic radar batch processor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CancellerArg {
    Meca,
    Eca,
}

impl From<CancellerArg> for Canceller {
    fn from(v: CancellerArg) -> Canceller {
        match v {
            CancellerArg::Meca => Canceller::Meca,
            CancellerArg::Eca => Canceller::Eca,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate surveillance-array data from a scenario config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the scenario noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the observation window, in seconds.
        #[arg(long)]
        window_s: Option<f64>,
    },
    /// Run the full cancellation / detection / angle-estimation chain.
    Process {
        #[arg(long)]
        iq: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "meca")]
        canceller: CancellerArg,
        /// Data window for the trimmed canceller, in seconds.
        #[arg(long)]
        window_s: Option<f64>,
    },
    /// Cancel with both cancellers and report residuals at the clutter bins.
    CompareCancellers {
        #[arg(long)]
        iq: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Data window for the trimmed canceller, in seconds.
        #[arg(long)]
        window_s: Option<f64>,
    },
    /// Auto-ambiguity diagnostics of the illuminator waveform.
    Aaf {
        /// Synthesise the waveform described by this config...
        #[arg(long)]
        config: Option<PathBuf>,
        /// ...or read a single-antenna IQ file.
        #[arg(long)]
        iq: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the waveform seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        max_delay: usize,
        #[arg(long, default_value_t = 150.0)]
        doppler_span_hz: f64,
        #[arg(long, default_value_t = 8)]
        mainlobe_guard: usize,
    },
}

/// A thin stderr logger so library warnings (e.g. rank-deficient
/// dictionaries) are visible without extra dependencies.
struct StderrLog;

impl log::Log for StderrLog {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::Level::Warn
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLog = StderrLog;

fn exit_code_for(err: &anyhow::Error) -> u8 {
    // configuration problems (bad TOML, schema violations, invalid arguments
    // reaching the library) exit 2; numerical failures exit 3
    if let Some(core) = err.downcast_ref::<pbr_core::Error>() {
        return match core {
            pbr_core::Error::Numerical(_) => 3,
            _ => 2,
        };
    }
    let text = format!("{err:#}");
    if text.contains("cannot parse config")
        || text.contains("cannot read config")
        || text.contains("must be")
        || text.contains("must lie")
        || text.contains("needs exactly one of")
        || text.contains("array geometry")
    {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(log::LevelFilter::Warn);
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out_dir,
            seed,
            window_s,
        } => commands::cmd_simulate(&config, &out_dir, seed, window_s),
        Command::Process {
            iq,
            config,
            out_dir,
            canceller,
            window_s,
        } => commands::cmd_process(&iq, &config, &out_dir, canceller.into(), window_s),
        Command::CompareCancellers {
            iq,
            config,
            out_dir,
            window_s,
        } => commands::cmd_compare_cancellers(&iq, &config, &out_dir, window_s),
        Command::Aaf {
            config,
            iq,
            out_dir,
            seed,
            max_delay,
            doppler_span_hz,
            mainlobe_guard,
        } => commands::cmd_aaf(
            config.as_deref(),
            iq.as_deref(),
            &out_dir,
            seed,
            max_delay,
            doppler_span_hz,
            mainlobe_guard,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
