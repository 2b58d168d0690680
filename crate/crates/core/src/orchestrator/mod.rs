//! The five bench protocols.
//!
//! Every protocol is split in two: `run_*` drives a [`Rig`] and records raw
//! telemetry, `analyze_*` turns that telemetry into metrics. A report's
//! metrics are always what `analyze_*` returns for the report's own rows.

mod battery;
mod noise;
mod static_torque;
mod thermal;
mod velocity;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::hal::{DriveCommand, HalError, MotorId, Rig, TelemetrySample};
use crate::output::round_sig9;

pub use battery::{analyze_battery, run_battery, BatteryConfig, BatteryMetrics, BatteryRow};
pub use noise::{analyze_noise, run_noise, NoiseCondition, NoiseConfig, NoiseMetrics, NoiseRow};
pub use static_torque::{
    analyze_static_torque, run_static_torque, LevelSpread, MotorFit, StaticTorqueConfig,
    StaticTorqueMetrics, TorqueMeasurement,
};
pub use thermal::{
    analyze_thermal, run_thermal, FallTime, PhaseOutcome, ThermalConfig, ThermalMetrics,
    ThermalPhase,
};
pub use velocity::{
    analyze_velocity_sweep, run_velocity_sweep, BodeRow, VelocitySweepConfig, VelocitySweepMetrics,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    StaticTorque,
    VelocitySweep,
    Thermal,
    Noise,
    Battery,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::StaticTorque,
        Protocol::VelocitySweep,
        Protocol::Thermal,
        Protocol::Noise,
        Protocol::Battery,
    ];

    /// Directory and config-section name.
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::StaticTorque => "static_torque",
            Protocol::VelocitySweep => "velocity_sweep",
            Protocol::Thermal => "thermal",
            Protocol::Noise => "noise",
            Protocol::Battery => "battery",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Hal(#[from] HalError),
    #[error("{context}: {source}")]
    Analysis {
        context: String,
        #[source]
        source: AnalysisError,
    },
    #[error("invalid protocol config: {0}")]
    Config(String),
    #[error("stator temperature {temp:.2} °C above the safety limit {limit:.2} °C")]
    SafetyCutoff { temp: f64, limit: f64 },
    #[error("no floor measurement to subtract from")]
    MissingFloor,
    #[error("pack not depleted within {horizon_s} s at {load_kg} kg")]
    NotDepleted { load_kg: f64, horizon_s: f64 },
    #[error("pack starts at {found:.3} V, expected {expected:.3} V")]
    StartVoltage { found: f64, expected: f64 },
    #[error("telemetry has no rows for segment {0:?}")]
    MissingSegment(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Hal(e) => e.code(),
            ProtocolError::Analysis { .. } => "E_ANALYSIS",
            ProtocolError::Config(_) => "E_PROTOCOL_CONFIG",
            ProtocolError::SafetyCutoff { .. } => "E_SAFETY_CUTOFF",
            ProtocolError::MissingFloor => "E_MISSING_FLOOR",
            ProtocolError::NotDepleted { .. } => "E_NOT_DEPLETED",
            ProtocolError::StartVoltage { .. } => "E_START_VOLTAGE",
            ProtocolError::MissingSegment(_) => "E_MISSING_SEGMENT",
        }
    }

    pub(crate) fn analysis(context: impl Into<String>) -> impl FnOnce(AnalysisError) -> Self {
        let context = context.into();
        move |source| ProtocolError::Analysis { context, source }
    }
}

/// One telemetry sample of one motor, tagged with the schedule segment it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub segment: String,
    pub t_s: f64,
    pub motor_id: u8,
    pub position_rad: f64,
    pub velocity_rad_s: f64,
    pub torque_nm: f64,
    pub current_a: f64,
    pub stator_temp_c: f64,
    pub pack_voltage_v: f64,
    /// Protocol setpoint for this motor at `t_s`.
    pub reference: f64,
    /// Protocol-specific instrument reading (scale tension, microphone level).
    pub aux: f64,
}

impl TelemetryRow {
    /// Values are rounded to the precision the CSV files carry, so a row
    /// read back from disk equals the one recorded.
    pub fn from_sample(segment: &str, s: &TelemetrySample, reference: f64, aux: f64) -> Self {
        Self {
            segment: segment.to_string(),
            t_s: round_sig9(s.t),
            motor_id: s.motor_id.number(),
            position_rad: round_sig9(s.position),
            velocity_rad_s: round_sig9(s.velocity),
            torque_nm: round_sig9(s.torque),
            current_a: round_sig9(s.current),
            stator_temp_c: round_sig9(s.stator_temp),
            pack_voltage_v: round_sig9(s.pack_voltage),
            reference: round_sig9(reference),
            aux: round_sig9(aux),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub seed: Option<u64>,
    pub toolkit_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metrics {
    StaticTorque(StaticTorqueMetrics),
    VelocitySweep(VelocitySweepMetrics),
    Thermal(ThermalMetrics),
    Noise(NoiseMetrics),
    Battery(BatteryMetrics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub protocol: Protocol,
    /// Snapshot of the protocol's config section.
    pub config: serde_json::Value,
    /// Hash of the full toolkit config the run was made under, once known.
    pub config_hash: Option<String>,
    /// Raw telemetry file, relative to the report.
    pub telemetry: String,
    pub metrics: Metrics,
    pub provenance: Provenance,
    #[serde(skip)]
    pub rows: Vec<TelemetryRow>,
}

impl TestReport {
    fn new<C: Serialize>(
        protocol: Protocol,
        config: &C,
        backend: &str,
        metrics: Metrics,
        rows: Vec<TelemetryRow>,
    ) -> Self {
        Self {
            protocol,
            config: serde_json::to_value(config).expect("configs serialize to JSON"),
            config_hash: None,
            telemetry: "telemetry.csv".to_string(),
            metrics,
            provenance: Provenance {
                backend: backend.to_string(),
                seed: None,
                toolkit_version: TOOLKIT_VERSION.to_string(),
            },
            rows,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.provenance.seed = Some(seed);
        self
    }
}

pub(crate) fn steps_in<R: Rig + ?Sized>(rig: &R, seconds: f64) -> u64 {
    (seconds / rig.control_period()).round() as u64
}

pub(crate) fn idle_both<R: Rig + ?Sized>(rig: &mut R) -> Result<(), HalError> {
    for m in MotorId::BOTH {
        rig.send_command(DriveCommand::idle(m))?;
    }
    Ok(())
}

/// Samples both motors and appends one row each.
pub(crate) fn log_both<R: Rig + ?Sized>(
    rig: &mut R,
    segment: &str,
    reference: [f64; 2],
    aux: [f64; 2],
    rows: &mut Vec<TelemetryRow>,
) -> Result<[TelemetrySample; 2], HalError> {
    let a = rig.sample(MotorId::M1)?;
    let b = rig.sample(MotorId::M2)?;
    rows.push(TelemetryRow::from_sample(segment, &a, reference[0], aux[0]));
    rows.push(TelemetryRow::from_sample(segment, &b, reference[1], aux[1]));
    Ok([a, b])
}

/// Rows grouped by segment then motor, in recorded order.
pub(crate) fn by_segment(rows: &[TelemetryRow]) -> BTreeMap<&str, [Vec<&TelemetryRow>; 2]> {
    let mut map: BTreeMap<&str, [Vec<&TelemetryRow>; 2]> = BTreeMap::new();
    for r in rows {
        if let Ok(m) = MotorId::try_from(r.motor_id) {
            map.entry(r.segment.as_str()).or_default()[m.index()].push(r);
        }
    }
    map
}

pub(crate) fn check(cond: bool, msg: &str) -> Result<(), ProtocolError> {
    if cond {
        Ok(())
    } else {
        Err(ProtocolError::Config(msg.to_string()))
    }
}

/// `h:mm:ss`, rounded to the second.
pub fn format_hms(seconds: f64) -> String {
    let s = seconds.round().max(0.0) as u64;
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hms() {
        assert_eq!(format_hms(40823.0), "11:20:23");
        assert_eq!(format_hms(9500.2), "02:38:20");
        assert_eq!(format_hms(0.0), "00:00:00");
    }

    #[test]
    fn error_codes() {
        assert_eq!(ProtocolError::MissingFloor.code(), "E_MISSING_FLOOR");
        let e = ProtocolError::from(HalError::Timeout("x"));
        assert_eq!(e.code(), "E_TIMEOUT");
    }
}
