use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ihpm_core::cli::{self, Command, OutputFormat, RunConfig};
use ihpm_core::PricingMode;

/// Integrated heat and power dispatch and pricing.
#[derive(Parser)]
#[command(name = "ihpm", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the dispatch and diagnose cost recovery.
    Dispatch {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the dispatch, then corrected prices and uplifts.
    Price {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::PerVector)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the dispatch and price only when some unit does not recover its costs.
    Run {
        /// Instance file, or a directory of instance files.
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::PerVector)]
        mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Operating region conversions.
    Region {
        #[command(subcommand)]
        op: RegionOp,
    },
}

#[derive(Subcommand)]
enum RegionOp {
    /// Convert a vertex list into half-space bounds.
    VerticesToHalfspaces {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solver tolerance override.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PerVector,
    Net,
}

impl From<Mode> for PricingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PerVector => PricingMode::PerVector,
            Mode::Net => PricingMode::Net,
        }
    }
}

fn config(command: Command, input: PathBuf, mode: Option<Mode>, common: Common) -> RunConfig {
    let mut cfg = RunConfig::new(command, input);
    if let Some(m) = mode {
        cfg.mode = m.into();
    }
    cfg.format = common.format;
    cfg.out = common.out;
    cfg.tol = common.tol;
    cfg
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let cfg = match args.command {
        Cmd::Dispatch { input, common } => config(Command::Dispatch, input, None, common),
        Cmd::Price { input, mode, common } => config(Command::Price, input, Some(mode), common),
        Cmd::Run { input, mode, common } => config(Command::Run, input, Some(mode), common),
        Cmd::Region { op: RegionOp::VerticesToHalfspaces { input, common } } => {
            config(Command::VerticesToHalfspaces, input, None, common)
        }
    };
    ExitCode::from(cli::execute(&cfg) as u8)
}
