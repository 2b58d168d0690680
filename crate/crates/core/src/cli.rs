//! Command-line front end.
//!
//! Exit codes: 0 success, 1 output I/O, 2 usage, 3 config, 4 protocol, 5 backend.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::calibrate::{calibrate_staged, CalibrationError, Group, Residual};
use crate::config::{ConfigError, ToolkitConfig};
use crate::hal::{BackendKind, FrameDrive, HalError, Rig, SimDrive};
use crate::orchestrator::{
    run_battery, run_noise, run_static_torque, run_thermal, run_velocity_sweep, Protocol,
    ProtocolError, TestReport,
};
use crate::output::{now_rfc3339, write_manifest, write_report, Manifest, OutputError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;
pub const EXIT_BACKEND: i32 = 5;

const DEFAULT_OUT: &str = "results";

#[derive(Debug, Parser)]
#[command(
    name = "tdubench",
    version,
    about = "Benchmark suite for two-motor tendon driver units"
)]
pub struct Cli {
    /// Toolkit config file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// `sim` or `frame`.
    #[arg(long, global = true, default_value = "sim")]
    pub backend: String,
    #[arg(long, global = true, env = "TDUBENCH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run on simulated time.
    #[arg(long, global = true)]
    pub accelerate: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hold torque steps against a fixed load and fit commanded vs measured torque.
    StaticTorque,
    /// Sinusoidal velocity tracking over amplitudes and frequencies.
    VelocitySweep,
    /// Stator heating and cooling with fans on and off.
    Thermal,
    /// Equivalent sound level per condition and speed.
    Noise,
    /// Runtime from full pack to cutoff per payload.
    Battery,
    /// Every protocol, each on its own rig.
    All,
    /// Fit plant parameters to the benchmark targets and print the fitted config.
    Calibrate {
        /// Groups to fit, in order; all four when omitted.
        #[arg(long = "group", value_name = "torque|battery|thermal|acoustic")]
        groups: Vec<Group>,
    },
    /// Print the effective config.
    DumpConfig,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(HalError),
    #[error("{protocol}: {source}")]
    Protocol {
        protocol: Protocol,
        #[source]
        source: ProtocolError,
    },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

fn hal_exit(e: &HalError) -> i32 {
    match e {
        HalError::OutOfRange { .. } | HalError::UnknownMotor(_) => EXIT_PROTOCOL,
        _ => EXIT_BACKEND,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(e) => hal_exit(e),
            CliError::Protocol { source, .. } => match source {
                ProtocolError::Hal(e) => hal_exit(e),
                ProtocolError::Config(_) => EXIT_CONFIG,
                _ => EXIT_PROTOCOL,
            },
            CliError::Calibration(e) => match e {
                CalibrationError::Simulation(h) => hal_exit(h),
                _ => EXIT_CONFIG,
            },
            CliError::Output(_) => EXIT_IO,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "E_CONFIG",
            CliError::Backend(e) => e.code(),
            CliError::Protocol { source, .. } => source.code(),
            CliError::Calibration(_) => "E_CALIBRATION",
            CliError::Output(_) => "E_IO",
        }
    }
}

/// Builds a fresh rig for one protocol run.
pub fn build_rig(
    config: &ToolkitConfig,
    backend: BackendKind,
    seed: u64,
) -> Result<Box<dyn Rig + Send>, CliError> {
    let drive = SimDrive::new(config.plant.clone(), &config.drive, config.sensors, seed)
        .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;
    Ok(match backend {
        BackendKind::Sim => Box::new(drive),
        BackendKind::Frame => Box::new(FrameDrive::over_sim(drive, &config.drive)),
    })
}

/// Runs one protocol on `rig` with its section of `config`.
pub fn run_protocol<R: Rig + ?Sized>(
    protocol: Protocol,
    config: &ToolkitConfig,
    rig: &mut R,
) -> Result<TestReport, ProtocolError> {
    match protocol {
        Protocol::StaticTorque => run_static_torque(&config.static_torque, rig),
        Protocol::VelocitySweep => run_velocity_sweep(&config.velocity_sweep, rig),
        Protocol::Thermal => run_thermal(&config.thermal, rig),
        Protocol::Noise => run_noise(&config.noise, rig),
        Protocol::Battery => run_battery(&config.battery, rig),
    }
}

fn run_one(
    protocol: Protocol,
    config: &ToolkitConfig,
    backend: BackendKind,
    seed: u64,
) -> Result<TestReport, CliError> {
    let mut rig = build_rig(config, backend, seed)?;
    let report = run_protocol(protocol, config, &mut *rig)
        .map_err(|source| CliError::Protocol { protocol, source })?;
    let mut report = report.with_seed(seed);
    report.config_hash = Some(config.hash());
    Ok(report)
}

fn load_config(path: Option<&Path>) -> Result<ToolkitConfig, CliError> {
    Ok(match path {
        Some(p) => ToolkitConfig::load(p)?,
        None => ToolkitConfig::default(),
    })
}

fn run_protocols(cli: &Cli, protocols: &[Protocol]) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let backend: BackendKind = cli.backend.parse().map_err(CliError::Backend)?;
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut manifest = Manifest::new(
        &config,
        cli.seed,
        backend.as_str(),
        cli.accelerate,
        now_rfc3339(),
    );

    let results: Vec<Result<TestReport, CliError>> = if protocols.len() == 1 {
        vec![run_one(protocols[0], &config, backend, cli.seed)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = protocols
                .iter()
                .map(|&p| {
                    let config = &config;
                    s.spawn(move || run_one(p, config, backend, cli.seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("protocol thread panicked"))
                .collect()
        })
    };

    let mut first_error = None;
    for result in results {
        match result {
            Ok(report) => {
                let files = write_report(&out, &report)?;
                println!(
                    "{}: {} telemetry rows -> {}",
                    report.protocol,
                    report.rows.len(),
                    out.join(report.protocol.as_str()).display()
                );
                manifest.outputs.extend(files);
            }
            Err(e) => {
                eprintln!("error[{}]: {e}", e.code());
                first_error.get_or_insert(e);
            }
        }
    }
    manifest.finished = now_rfc3339();
    write_manifest(&out, &config, &mut manifest)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct GroupResiduals {
    group: Group,
    iterations: usize,
    residuals: Vec<Residual>,
}

fn calibrate_cmd(cli: &Cli, groups: &[Group]) -> Result<(), CliError> {
    let mut config = load_config(cli.config.as_deref())?;
    let groups = if groups.is_empty() {
        &Group::STAGED[..]
    } else {
        groups
    };
    let stages = calibrate_staged(&config, groups)?;
    let mut report = Vec::new();
    for (group, cal) in stages {
        for r in &cal.residuals {
            eprintln!(
                "{group:?}: {:<32} target {:>10.4} fitted {:>10.4} ({:+.2}%)",
                r.target,
                r.target_value,
                r.predicted,
                100.0 * r.relative
            );
        }
        config.plant = cal.params;
        report.push(GroupResiduals {
            group,
            iterations: cal.iterations,
            residuals: cal.residuals,
        });
    }
    config.validate()?;
    let text = config.to_toml_string();
    print!("{text}");
    if let Some(out) = &cli.out {
        let dir = out.join("calibration");
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| OutputError::Io { path, source }
        };
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, &text).map_err(io(&cfg_path))?;
        let res_path = dir.join("residuals.json");
        let json = serde_json::to_string_pretty(&report).expect("residuals serialize") + "\n";
        std::fs::write(&res_path, json).map_err(io(&res_path))?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::StaticTorque => run_protocols(cli, &[Protocol::StaticTorque]),
        Command::VelocitySweep => run_protocols(cli, &[Protocol::VelocitySweep]),
        Command::Thermal => run_protocols(cli, &[Protocol::Thermal]),
        Command::Noise => run_protocols(cli, &[Protocol::Noise]),
        Command::Battery => run_protocols(cli, &[Protocol::Battery]),
        Command::All => run_protocols(cli, &Protocol::ALL),
        Command::Calibrate { groups } => calibrate_cmd(cli, groups),
        Command::DumpConfig => {
            print!("{}", load_config(cli.config.as_deref())?.to_toml_string());
            Ok(())
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if !matches!(e, CliError::Protocol { .. }) {
                eprintln!("error[{}]: {e}", e.code());
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["tdubench", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["tdubench", "noise", "--bogus"]), EXIT_USAGE);
        assert_eq!(
            run(["tdubench", "calibrate", "--group", "optics"]),
            EXIT_USAGE
        );
        assert_eq!(run(["tdubench", "--help"]), EXIT_OK);
    }

    #[test]
    fn exit_code_mapping() {
        let range = HalError::OutOfRange {
            what: "torque",
            value: 9.0,
            limit: 3.0,
        };
        assert_eq!(CliError::Backend(range.clone()).exit_code(), EXIT_PROTOCOL);
        assert_eq!(
            CliError::Backend(HalError::Timeout("x")).exit_code(),
            EXIT_BACKEND
        );
        let p = |source| CliError::Protocol {
            protocol: Protocol::Noise,
            source,
        };
        assert_eq!(p(ProtocolError::MissingFloor).exit_code(), EXIT_PROTOCOL);
        assert_eq!(p(ProtocolError::Hal(range)).exit_code(), EXIT_PROTOCOL);
        assert_eq!(
            p(ProtocolError::Config("x".into())).exit_code(),
            EXIT_CONFIG
        );
        assert_eq!(
            CliError::Config(ConfigError::Invalid("x".into())).exit_code(),
            EXIT_CONFIG
        );
    }
}
