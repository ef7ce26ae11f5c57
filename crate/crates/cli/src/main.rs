use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

mod commands;
mod config;
mod output;

use commands::{CommandError, Report};
use config::{ConfigError, Method, RunConfig};
use output::{write_summary, Status};

#[derive(Parser, Debug)]
#[command(name = "homctl", version, about = "Null control of coupled parabolic systems with oscillating coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides `output.out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Worker threads for the ε sweep (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Also write trajectory.csv for `control`.
    #[arg(long, global = true)]
    dump_traj: bool,

    /// Overrides `control.method`.
    #[arg(long, global = true)]
    method: Option<MethodArg>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Kalman rank, spectral hypothesis and cascade form of (A, B).
    Kalman,
    /// Coupled eigenpairs, gap and ω-mass diagnostics.
    Spectrum,
    /// Synthesize a null control.
    Control,
    /// Control homogenization sweep over `system.eps_list`.
    Sweep,
    /// Change-of-variables round trip and spectrum invariance.
    TransformCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Kalman => "kalman",
            Command::Spectrum => "spectrum",
            Command::Control => "control",
            Command::Sweep => "sweep",
            Command::TransformCheck => "transform-check",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MethodArg {
    Hum,
    ThreeStage,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_HYPOTHESIS: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid(vec!["--config: required".into()]))?;
    let mut config = config::parse_config(path)?;
    if let Some(dir) = &cli.out_dir {
        config.output.out_dir = dir.clone();
    }
    if cli.dump_traj {
        config.output.dump_trajectory = true;
    }
    if let Some(m) = cli.method {
        config.control.method = match m {
            MethodArg::Hum => Method::Hum,
            MethodArg::ThreeStage => Method::ThreeStage,
        };
    }
    Ok(config)
}

fn classify(err: &CommandError) -> (Status, u8) {
    use homctl::error::Error;
    match err {
        CommandError::Io(_) => (Status::InvalidInput, EXIT_CONFIG),
        CommandError::Core(e) if e.is_hypothesis() => (Status::HypothesisViolation, EXIT_HYPOTHESIS),
        CommandError::Core(Error::InvalidParameter(_) | Error::DimensionMismatch(_) | Error::Resolution(_)) => {
            (Status::InvalidInput, EXIT_CONFIG)
        }
        CommandError::Core(_) => (Status::NumericalFailure, EXIT_NUMERICAL),
    }
}

fn exit_code(status: Status) -> u8 {
    match status {
        Status::Ok => 0,
        Status::InvalidInput => EXIT_CONFIG,
        Status::HypothesisViolation => EXIT_HYPOTHESIS,
        Status::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn dispatch(command: Command, config: &RunConfig, dir: &Path) -> Result<Report, CommandError> {
    match command {
        Command::Kalman => commands::kalman(config),
        Command::Spectrum => commands::spectrum(config, dir),
        Command::Control => commands::control(config, dir),
        Command::Sweep => commands::sweep(config, dir),
        Command::TransformCheck => commands::transform_check(config, dir),
    }
}

fn run(cli: Cli) -> u8 {
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("homctl: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("homctl: cannot size thread pool: {e}");
            return EXIT_CONFIG;
        }
    }
    let dir = config.output.out_dir.clone();
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("homctl: cannot create {}: {e}", dir.display());
        return EXIT_CONFIG;
    }

    let start = Instant::now();
    let (status, reason, results) = match dispatch(cli.command, &config, &dir) {
        Ok(Report { results, failure: None }) => (Status::Ok, None, results),
        Ok(Report {
            results,
            failure: Some((status, reason)),
        }) => (status, Some(reason), results),
        Err(e) => (classify(&e).0, Some(e.to_string()), Value::Null),
    };
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(r) = &reason {
        eprintln!("homctl {}: {r}", cli.command.name());
    }
    match write_summary(&dir, cli.command.name(), &config, status, reason.as_deref(), elapsed, results) {
        Ok(path) => log::info!("wrote {}", path.display()),
        Err(e) => {
            eprintln!("homctl: cannot write summary: {e}");
            return EXIT_CONFIG;
        }
    }
    exit_code(status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(Cli::parse()))
}
