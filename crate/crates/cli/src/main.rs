//! Command-line driver: loads a scenario, applies overrides, runs the
//! requested experiment, and writes its table into the output directory.
//!
//! Exit codes: 0 on success with all conservation checks passing, 2 for
//! configuration/argument errors, 3 for I/O errors, 4 for invariant
//! violations. Output files are buffered in memory and written only once
//! every contributing run has finished, so no partial tables ever land on
//! disk.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdcsim::metrics::{write_cdf, write_compare, write_run_summary, write_sweep_summary};
use mdcsim::{conservation_check, parse_config_with_overrides, Arm, Error, SimulationConfig};

/// Environment variable supplying the default output directory; the `--out`
/// flag always wins.
const OUT_ENV: &str = "MDCSIM_OUT";

#[derive(Parser)]
#[command(
    name = "mdcsim",
    version,
    about = "Deterministic simulator of a multipath-capable mobile device cloud \
             with a queue-threshold congestion handler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Scenario file (TOML). Omitting it runs the built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-path override applied after the file, e.g.
    /// --set workload.lambda=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed; wins over both the file and --set. Capped at the largest
    /// TOML-representable integer so resolved configs stay exportable.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Output directory for tables (default: $MDCSIM_OUT, then ".").
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for multi-run commands; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ArmsChoice {
    Both,
    With,
    Without,
}

impl ArmsChoice {
    fn arms(self) -> Vec<Arm> {
        match self {
            ArmsChoice::Both => vec![Arm::With, Arm::Without],
            ArmsChoice::With => vec![Arm::With],
            ArmsChoice::Without => vec![Arm::Without],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write run_summary.csv.
    Run {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Sweep aggregate capacity with paired handler-on/off arms and write
    /// sweep_summary.csv.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Inclusive capacity range as start:stop:step.
        #[arg(long, value_name = "START:STOP:STEP", default_value = "100:1000:100")]
        capacities: String,
        /// Paired runs per capacity.
        #[arg(long, default_value_t = 10)]
        iterations: u32,
    },
    /// Compare handler-on against handler-off at the configured capacity and
    /// write compare.csv.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        /// Paired runs (one per derived seed).
        #[arg(long, default_value_t = 10)]
        iterations: u32,
    },
    /// Export pooled completion-time CDFs to cdf.csv.
    Cdf {
        #[command(flatten)]
        common: CommonOpts,
        /// Runs pooled per arm.
        #[arg(long, default_value_t = 10)]
        iterations: u32,
        /// Which arms to simulate.
        #[arg(long, value_enum, default_value_t = ArmsChoice::Both)]
        arms: ArmsChoice,
    },
    /// Parse and validate the configuration, print the resolved document,
    /// and run nothing.
    ValidateConfig {
        #[command(flatten)]
        common: CommonOpts,
    },
}

/// Everything that can end a command, mapped onto the exit-code contract.
enum Failure {
    Core(Error),
    ConservationViolated,
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::ConfigParse(_) | Error::ConfigInvalid { .. } | Error::Domain(_)) => 2,
            Failure::Core(Error::Io { .. }) => 3,
            Failure::Core(Error::Contract(_)) | Failure::ConservationViolated => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => e.fmt(f),
            Failure::ConservationViolated => {
                f.write_str("conservation check failed: a run lost or double-counted work")
            }
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<SimulationConfig, Error> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?,
        None => String::new(),
    };
    let mut config = parse_config_with_overrides(&text, &common.set)?;
    if let Some(seed) = common.seed {
        config.simulation.seed = seed;
    }
    Ok(config)
}

fn output_dir(common: &CommonOpts) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Renders a table into memory, then lands it in the output directory in one
/// write.
fn write_table<F>(dir: &Path, name: &str, render: F) -> Result<PathBuf, Error>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    let path = dir.join(name);
    let mut buffer = Vec::new();
    render(&mut buffer).map_err(|e| Error::io(path.clone(), e))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    fs::write(&path, buffer).map_err(|e| Error::io(path.clone(), e))?;
    Ok(path)
}

/// Expands an inclusive `start:stop:step` capacity range.
fn parse_capacities(spec: &str) -> Result<Vec<u64>, Error> {
    let parse = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| Error::ConfigParse(format!("'{s}' in --capacities is not an integer")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(Error::ConfigParse(format!(
            "--capacities must have the form start:stop:step, got '{spec}'"
        )));
    };
    let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
    if start == 0 || step == 0 || stop < start {
        return Err(Error::ConfigParse(format!(
            "--capacities needs start >= 1, step >= 1, stop >= start, got '{spec}'"
        )));
    }
    Ok((start..=stop).step_by(step as usize).collect())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { common } => {
            let config = load_config(&common)?;
            let report = mdcsim::run(&config)?;
            let path = write_table(&output_dir(&common), "run_summary.csv", |out| {
                write_run_summary(out, &config, std::slice::from_ref(&report))
            })?;
            println!("wrote {}", path.display());
            println!(
                "serviced {} of {} requests ({} dropped, {} still in flight)",
                report.requests_serviced,
                report.requests_arrived,
                report.dropped_requests_total(),
                report.requests_in_flight,
            );
            if !conservation_check(&report) {
                return Err(Failure::ConservationViolated);
            }
            Ok(())
        }
        Command::Sweep { common, capacities, iterations } => {
            let config = load_config(&common)?;
            let capacities = parse_capacities(&capacities)?;
            let sweep = mdcsim::run_sweep(&config, &capacities, iterations, common.jobs)?;
            let path = write_table(&output_dir(&common), "sweep_summary.csv", |out| {
                write_sweep_summary(out, &sweep)
            })?;
            println!("wrote {}", path.display());
            println!(
                "{} capacities x {} paired runs per capacity",
                sweep.rows.len(),
                sweep.iterations,
            );
            if !sweep.conservation_ok {
                return Err(Failure::ConservationViolated);
            }
            Ok(())
        }
        Command::Compare { common, iterations } => {
            let config = load_config(&common)?;
            let comparison = mdcsim::run_compare(&config, iterations, common.jobs)?;
            let path = write_table(&output_dir(&common), "compare.csv", |out| {
                write_compare(out, &comparison)
            })?;
            println!("wrote {}", path.display());
            println!(
                "mean serviced {} with handler vs {} without (improvement {}%)",
                comparison.mean_serviced_with,
                comparison.mean_serviced_without,
                comparison.improvement_pct,
            );
            if !comparison.conservation_ok {
                return Err(Failure::ConservationViolated);
            }
            Ok(())
        }
        Command::Cdf { common, iterations, arms } => {
            let config = load_config(&common)?;
            let cdf = mdcsim::run_cdf(&config, iterations, &arms.arms(), common.jobs)?;
            let path = write_table(&output_dir(&common), "cdf.csv", |out| write_cdf(out, &cdf))?;
            println!("wrote {}", path.display());
            for (arm, times) in &cdf.arms {
                println!("{arm}: {} completions pooled", times.len());
            }
            if !cdf.conservation_ok {
                return Err(Failure::ConservationViolated);
            }
            Ok(())
        }
        Command::ValidateConfig { common } => {
            let config = load_config(&common)?;
            print!("{}", config.to_toml_string()?);
            Ok(())
        }
    }
}
