//! Result files: telemetry and metric CSVs, JSON reports and the run manifest.
//!
//! Layout under an output directory:
//!
//! ```text
//! manifest.json
//! config.toml
//! <protocol>/telemetry.csv
//! <protocol>/report.json
//! velocity_sweep/bode.csv
//! noise/noise.csv
//! ```
//!
//! Floats in CSV files are written with at most 9 significant digits so that
//! runs compare byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ToolkitConfig;
use crate::hal::MotorId;
use crate::orchestrator::{BodeRow, Metrics, NoiseRow, TelemetryRow, TestReport, TOOLKIT_VERSION};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("verification failed: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> OutputError + '_ {
    move |source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// `x` rounded to 9 significant digits; non-finite values pass through.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    rounded + 0.0
}

/// Shortest decimal form of `x` rounded to 9 significant digits.
pub fn fmt_float(x: f64) -> String {
    round_sig9(x).to_string()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// A row type with a fixed CSV layout.
pub trait CsvRecord: Sized {
    const HEADERS: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
    /// Inverse of [`CsvRecord::fields`].
    fn parse(fields: &csv::StringRecord) -> Option<Self>;
}

fn num(s: &str) -> Option<f64> {
    s.parse().ok()
}

fn opt_num(s: &str) -> Option<Option<f64>> {
    if s.is_empty() {
        Some(None)
    } else {
        num(s).map(Some)
    }
}

impl CsvRecord for TelemetryRow {
    const HEADERS: &'static [&'static str] = &[
        "segment",
        "t_s",
        "motor_id",
        "position_rad",
        "velocity_rad_s",
        "torque_nm",
        "current_a",
        "stator_temp_c",
        "pack_voltage_v",
        "reference",
        "aux",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.segment.clone(),
            fmt_float(self.t_s),
            self.motor_id.to_string(),
            fmt_float(self.position_rad),
            fmt_float(self.velocity_rad_s),
            fmt_float(self.torque_nm),
            fmt_float(self.current_a),
            fmt_float(self.stator_temp_c),
            fmt_float(self.pack_voltage_v),
            fmt_float(self.reference),
            fmt_float(self.aux),
        ]
    }

    fn parse(f: &csv::StringRecord) -> Option<Self> {
        Some(Self {
            segment: f.get(0)?.to_string(),
            t_s: num(f.get(1)?)?,
            motor_id: f.get(2)?.parse().ok()?,
            position_rad: num(f.get(3)?)?,
            velocity_rad_s: num(f.get(4)?)?,
            torque_nm: num(f.get(5)?)?,
            current_a: num(f.get(6)?)?,
            stator_temp_c: num(f.get(7)?)?,
            pack_voltage_v: num(f.get(8)?)?,
            reference: num(f.get(9)?)?,
            aux: num(f.get(10)?)?,
        })
    }
}

impl CsvRecord for BodeRow {
    const HEADERS: &'static [&'static str] = &[
        "motor_id",
        "amplitude_rad_s",
        "freq_hz",
        "gain_db",
        "phase_deg",
        "diverged",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.motor
                .map(|m| m.number().to_string())
                .unwrap_or_default(),
            fmt_float(self.amplitude),
            fmt_float(self.frequency),
            fmt_opt(self.gain_db),
            fmt_opt(self.phase_deg),
            self.diverged.to_string(),
        ]
    }

    fn parse(f: &csv::StringRecord) -> Option<Self> {
        let motor = match f.get(0)? {
            "" => None,
            m => Some(MotorId::try_from(m.parse::<u8>().ok()?).ok()?),
        };
        Some(Self {
            motor,
            amplitude: num(f.get(1)?)?,
            frequency: num(f.get(2)?)?,
            gain_db: opt_num(f.get(3)?)?,
            phase_deg: opt_num(f.get(4)?)?,
            diverged: f.get(5)?.parse().ok()?,
        })
    }
}

impl CsvRecord for NoiseRow {
    const HEADERS: &'static [&'static str] =
        &["condition", "speed_rad_s", "leq_db", "floor_subtracted"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.condition.as_str().to_string(),
            fmt_float(self.speed_rad_s),
            fmt_float(self.leq_db),
            self.floor_subtracted.to_string(),
        ]
    }

    fn parse(f: &csv::StringRecord) -> Option<Self> {
        let condition =
            serde_json::from_value(serde_json::Value::String(f.get(0)?.to_string())).ok()?;
        let leq_db = num(f.get(2)?)?;
        Some(Self {
            condition,
            speed_rad_s: num(f.get(1)?)?,
            leq_db,
            floor_subtracted: f.get(3)?.parse().ok()?,
            // not part of the table
            raw_db: f64::NAN,
        })
    }
}

pub fn write_csv<R: CsvRecord>(path: &Path, rows: &[R]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(R::HEADERS).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r.fields()).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a table written by [`write_csv`], checking the header row.
pub fn read_csv<R: CsvRecord>(path: &Path) -> Result<Vec<R>, OutputError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?;
    if headers.iter().ne(R::HEADERS.iter().copied()) {
        return Err(OutputError::Mismatch(format!(
            "{}: expected columns {}",
            path.display(),
            R::HEADERS.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = R::parse(&rec).ok_or_else(|| {
            OutputError::Mismatch(format!("{}: malformed data row {}", path.display(), i + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Writes one protocol's files under `out/<protocol>/`; returns their paths relative to `out`.
pub fn write_report(out: &Path, report: &TestReport) -> Result<Vec<String>, OutputError> {
    let name = report.protocol.as_str();
    let dir = out.join(name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut written = Vec::new();
    let mut rel = |file: &str| {
        written.push(format!("{name}/{file}"));
        dir.join(file)
    };
    write_csv(&rel(&report.telemetry), &report.rows)?;
    write_json(&rel("report.json"), report)?;
    match &report.metrics {
        Metrics::VelocitySweep(m) => write_csv(&rel("bode.csv"), &m.points)?,
        Metrics::Noise(m) => write_csv(&rel("noise.csv"), &m.rows)?,
        _ => {}
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub backend: String,
    /// Requested clock mode; the simulated backend always runs unpaced.
    pub accelerate: bool,
    /// Files written, relative to the manifest.
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
}

impl Manifest {
    pub fn new(
        config: &ToolkitConfig,
        seed: u64,
        backend: &str,
        accelerate: bool,
        started: String,
    ) -> Self {
        Self {
            version: TOOLKIT_VERSION.to_string(),
            config_hash: config.hash(),
            seed,
            backend: backend.to_string(),
            accelerate,
            outputs: Vec::new(),
            started,
            finished: String::new(),
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes the config dump and the manifest. `manifest.outputs` gets the config file appended.
pub fn write_manifest(
    out: &Path,
    config: &ToolkitConfig,
    manifest: &mut Manifest,
) -> Result<(), OutputError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, config.to_toml_string()).map_err(io_err(&cfg_path))?;
    if !manifest.outputs.iter().any(|o| o == CONFIG_FILE) {
        manifest.outputs.push(CONFIG_FILE.to_string());
    }
    write_json(&out.join(MANIFEST_FILE), manifest)
}

/// Checks that `out` was produced under `config`: manifest hash, every listed
/// file present, and every report carrying the same hash.
pub fn verify_manifest(out: &Path, config: &ToolkitConfig) -> Result<Manifest, OutputError> {
    let manifest: Manifest = read_json(&out.join(MANIFEST_FILE))?;
    let expected = config.hash();
    if manifest.config_hash != expected {
        return Err(OutputError::Mismatch(format!(
            "manifest hash {} differs from config hash {expected}",
            manifest.config_hash
        )));
    }
    for rel in &manifest.outputs {
        let path = out.join(rel);
        if !path.is_file() {
            return Err(OutputError::Mismatch(format!("missing output {rel}")));
        }
        if rel.ends_with("report.json") {
            let report: serde_json::Value = read_json(&path)?;
            if report.get("config_hash").and_then(|h| h.as_str()) != Some(expected.as_str()) {
                return Err(OutputError::Mismatch(format!(
                    "{rel} was produced under another config"
                )));
            }
        }
    }
    Ok(manifest)
}
