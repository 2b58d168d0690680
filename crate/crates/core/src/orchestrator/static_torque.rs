use serde::{Deserialize, Serialize};

use super::{
    by_segment, check, idle_both, Metrics, Protocol, ProtocolError, TelemetryRow, TestReport,
};
use crate::analysis::{linear_fit, torque_stats, LinearFit};
use crate::hal::{DriveCommand, DriveMode, Fixture, MotorId, Rig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticTorqueConfig {
    /// Commanded torques, N·m, ascending.
    pub torque_levels: Vec<f64>,
    pub settle_s: f64,
    pub repetitions: usize,
    pub pulley_radius: f64,
    /// Tested one after the other, never together.
    pub motors: Vec<MotorId>,
    /// Unloaded pause between measurements, s.
    pub release_s: f64,
}

impl Default for StaticTorqueConfig {
    fn default() -> Self {
        Self {
            torque_levels: (1..=8).map(|k| k as f64 * 0.25).collect(),
            settle_s: 30.0,
            repetitions: 5,
            pulley_radius: 0.015,
            motors: MotorId::BOTH.to_vec(),
            release_s: 1.0,
        }
    }
}

impl StaticTorqueConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let l = &self.torque_levels;
        check(!l.is_empty(), "static_torque: no torque levels")?;
        check(l[0] > 0.0, "static_torque: torque levels must be positive")?;
        check(
            l.windows(2).all(|w| w[1] > w[0]),
            "static_torque: torque levels must ascend",
        )?;
        check(
            self.repetitions >= 1,
            "static_torque: repetitions must be >= 1",
        )?;
        check(
            self.settle_s > 0.0,
            "static_torque: settle must be positive",
        )?;
        check(self.release_s >= 0.0, "static_torque: release must be >= 0")?;
        check(
            self.pulley_radius > 0.0,
            "static_torque: pulley radius must be positive",
        )?;
        check(!self.motors.is_empty(), "static_torque: no motors selected")?;
        check(
            self.motors.len() == 1 || self.motors[0] != self.motors[1],
            "static_torque: duplicate motor",
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorqueMeasurement {
    pub motor: MotorId,
    pub commanded: f64,
    pub tension_n: f64,
    /// Tension times pulley radius, N·m.
    pub measured: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorFit {
    pub motor: MotorId,
    /// Measured against commanded torque.
    pub fit: LinearFit<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpread {
    pub motor: MotorId,
    pub commanded: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticTorqueMetrics {
    pub measurements: Vec<TorqueMeasurement>,
    pub fits: Vec<MotorFit>,
    pub spread: Vec<LevelSpread>,
}

pub fn run_static_torque<R: Rig + ?Sized>(
    cfg: &StaticTorqueConfig,
    rig: &mut R,
) -> Result<TestReport, ProtocolError> {
    cfg.validate()?;
    rig.attach(Fixture::LoadCell)?;
    idle_both(rig)?;
    rig.step()?;
    let mut rows = Vec::new();
    for &motor in &cfg.motors {
        let segment = motor.to_string();
        for &level in &cfg.torque_levels {
            for _ in 0..cfg.repetitions {
                rig.send_command(DriveCommand::new(motor, DriveMode::Torque, level))?;
                rig.run_for(cfg.settle_s)?;
                let tension = rig.load_cell(motor, cfg.pulley_radius)?;
                let s = rig.sample(motor)?;
                rows.push(TelemetryRow::from_sample(&segment, &s, level, tension));
                rig.send_command(DriveCommand::idle(motor))?;
                rig.run_for(cfg.release_s)?;
            }
        }
    }
    let metrics = analyze_static_torque(cfg, &rows)?;
    Ok(TestReport::new(
        Protocol::StaticTorque,
        cfg,
        rig.backend(),
        Metrics::StaticTorque(metrics),
        rows,
    ))
}

pub fn analyze_static_torque(
    cfg: &StaticTorqueConfig,
    rows: &[TelemetryRow],
) -> Result<StaticTorqueMetrics, ProtocolError> {
    let segments = by_segment(rows);
    let mut measurements = Vec::new();
    let mut fits = Vec::new();
    let mut spread = Vec::new();
    for &motor in &cfg.motors {
        let name = motor.to_string();
        let motor_rows = segments
            .get(name.as_str())
            .map(|m| &m[motor.index()])
            .filter(|r| !r.is_empty())
            .ok_or_else(|| ProtocolError::MissingSegment(name.clone()))?;
        let ms: Vec<TorqueMeasurement> = motor_rows
            .iter()
            .map(|r| TorqueMeasurement {
                motor,
                commanded: r.reference,
                tension_n: r.aux,
                measured: r.aux * cfg.pulley_radius,
            })
            .collect();
        let points: Vec<(f64, f64)> = ms.iter().map(|m| (m.commanded, m.measured)).collect();
        let fit =
            linear_fit(&points).map_err(ProtocolError::analysis(format!("{motor} regression")))?;
        fits.push(MotorFit { motor, fit });
        for &level in &cfg.torque_levels {
            let at: Vec<f64> = ms
                .iter()
                .filter(|m| m.commanded == level)
                .map(|m| m.measured)
                .collect();
            if let Ok((mean, sd)) = torque_stats(&at) {
                spread.push(LevelSpread {
                    motor,
                    commanded: level,
                    mean,
                    sd,
                });
            }
        }
        measurements.extend(ms);
    }
    Ok(StaticTorqueMetrics {
        measurements,
        fits,
        spread,
    })
}
