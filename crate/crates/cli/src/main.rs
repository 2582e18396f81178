use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Simulates the regularized cell model and evaluates its lifespan bound.
#[derive(Debug, Parser)]
#[command(name = "cellspan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Configuration file.
    #[arg(value_name = "CONFIG")]
    path: Option<PathBuf>,
    /// Configuration file (alternative to the positional argument).
    #[arg(long = "config", value_name = "PATH", conflicts_with = "path")]
    flag: Option<PathBuf>,
    /// Output directory; overrides [output] directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn config_path(&self) -> Option<&PathBuf> {
        self.path.as_ref().or(self.flag.as_ref())
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time-integrate a configuration and write fields and diagnostics.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Repeat the run along a halving schedule of tau.
        #[arg(long)]
        tau_continuation: bool,
        /// Use the unregularized kinetics.
        #[arg(long)]
        verification_mode: bool,
    },
    /// Evaluate the lifespan bound of the [apriori] section.
    Lifespan {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the verification cases.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        case: VerifyCase,
        /// Output directory.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Repeat a configuration over values of one parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
        /// Members run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Use the unregularized kinetics.
        #[arg(long)]
        verification_mode: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyCase {
    All,
    Spatial,
    Temporal,
    Constant,
    Equilibrium,
    Uniqueness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    /// Lifespan calibration constant.
    C,
    Tau,
    Alpha4,
    Dt,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CELLSPAN_LOG", "warn")).init();
    let cli = Cli::parse();
    let status = match cli.command {
        Command::Run {
            config,
            tau_continuation,
            verification_mode,
        } => commands::load(&config).and_then(|(cfg, out)| {
            commands::cmd_run(cfg, &out, tau_continuation, verification_mode)
        }),
        Command::Lifespan { config } => {
            commands::load(&config).and_then(|(cfg, out)| commands::cmd_lifespan(&cfg, &out))
        }
        Command::Verify { case, out } => commands::cmd_verify(case, &out),
        Command::Sweep {
            config,
            axis,
            values,
            jobs,
            verification_mode,
        } => commands::load(&config).and_then(|(cfg, out)| {
            commands::cmd_sweep(cfg, &out, axis, &values, jobs, verification_mode)
        }),
    };
    match status {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::Status::SolverFailure as u8)
        }
    }
}
