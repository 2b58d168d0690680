use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{
    by_segment, check, format_hms, idle_both, log_both, steps_in, Metrics, Protocol, ProtocolError,
    TelemetryRow, TestReport,
};
use crate::analysis::{runtime_from_log, torque_stats};
use crate::hal::{DriveCommand, DriveMode, Fault, Fixture, HalError, MotorId, Rig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    /// Hanging mass per motor, kg. Zero means the idle condition: unit on, motors still.
    pub loads_kg: Vec<f64>,
    pub position_amplitude: f64,
    pub position_period: f64,
    pub start_voltage: f64,
    pub cutoff_voltage: f64,
    pub log_period_s: f64,
    /// Give up on a condition after this long, s.
    pub horizon_s: f64,
    pub fans: bool,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            loads_kg: vec![0.0, 2.0, 4.0, 6.0],
            position_amplitude: TAU,
            position_period: 6.0,
            start_voltage: 29.1,
            cutoff_voltage: 17.5,
            log_period_s: 2.5,
            horizon_s: 86_400.0,
            fans: true,
        }
    }
}

impl BatteryConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        check(!self.loads_kg.is_empty(), "battery: no loads")?;
        check(
            self.loads_kg.iter().all(|&m| m >= 0.0 && m.is_finite()),
            "battery: loads must be >= 0",
        )?;
        check(
            self.position_period > 0.0,
            "battery: position period must be positive",
        )?;
        check(
            self.start_voltage > self.cutoff_voltage,
            "battery: start voltage must exceed the cutoff",
        )?;
        check(
            self.log_period_s > 0.0,
            "battery: log period must be positive",
        )?;
        check(self.horizon_s > 0.0, "battery: horizon must be positive")?;
        Ok(())
    }

    fn segment(i: usize) -> String {
        format!("load{i}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRow {
    pub load_kg: f64,
    pub runtime_s: f64,
    pub runtime_hms: String,
    /// Over both motors while the pack was above the cutoff, N·m.
    pub torque_mean: f64,
    pub torque_sd: f64,
    /// Positive shaft work of both motors, rectangle rule over the log, J.
    pub mechanical_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryMetrics {
    pub conditions: Vec<BatteryRow>,
}

pub fn run_battery<R: Rig + ?Sized>(
    cfg: &BatteryConfig,
    rig: &mut R,
) -> Result<TestReport, ProtocolError> {
    cfg.validate()?;
    let log_every = steps_in(rig, cfg.log_period_s).max(1);
    let dt = rig.control_period();
    let mut rows = Vec::new();
    for (i, &mass) in cfg.loads_kg.iter().enumerate() {
        let segment = BatteryConfig::segment(i);
        rig.recharge()?;
        rig.attach(if mass > 0.0 {
            Fixture::HangingMass { mass_kg: mass }
        } else {
            Fixture::Free
        })?;
        rig.set_fans(cfg.fans)?;
        idle_both(rig)?;
        let horizon = steps_in(rig, cfg.horizon_s);
        let mut k = 0u64;
        loop {
            let position =
                cfg.position_amplitude * (TAU * k as f64 * dt / cfg.position_period).sin();
            let reference = if mass > 0.0 { position } else { 0.0 };
            if k.is_multiple_of(log_every) {
                let s = log_both(rig, &segment, [reference; 2], [0.0; 2], &mut rows)?;
                let v = s[0].pack_voltage;
                if k == 0 && (v - cfg.start_voltage).abs() > 0.05 {
                    return Err(ProtocolError::StartVoltage {
                        found: v,
                        expected: cfg.start_voltage,
                    });
                }
                if v <= cfg.cutoff_voltage {
                    break;
                }
            }
            if k >= horizon {
                idle_both(rig)?;
                return Err(ProtocolError::NotDepleted {
                    load_kg: mass,
                    horizon_s: cfg.horizon_s,
                });
            }
            if mass > 0.0 {
                let mut cut = false;
                for m in MotorId::BOTH {
                    match rig.send_command(DriveCommand::new(m, DriveMode::PositionPid, position)) {
                        Ok(_) => {}
                        Err(HalError::Fault(Fault::Undervoltage)) => cut = true,
                        Err(e) => return Err(e.into()),
                    }
                }
                if cut {
                    log_both(rig, &segment, [reference; 2], [0.0; 2], &mut rows)?;
                    break;
                }
            }
            rig.step()?;
            k += 1;
        }
    }
    let metrics = analyze_battery(cfg, &rows)?;
    Ok(TestReport::new(
        Protocol::Battery,
        cfg,
        rig.backend(),
        Metrics::Battery(metrics),
        rows,
    ))
}

pub fn analyze_battery(
    cfg: &BatteryConfig,
    rows: &[TelemetryRow],
) -> Result<BatteryMetrics, ProtocolError> {
    let segments = by_segment(rows);
    let mut conditions = Vec::new();
    for (i, &mass) in cfg.loads_kg.iter().enumerate() {
        let name = BatteryConfig::segment(i);
        let seg = segments
            .get(name.as_str())
            .filter(|m| m.iter().all(|r| !r.is_empty()))
            .ok_or_else(|| ProtocolError::MissingSegment(name.clone()))?;
        let log: Vec<(f64, f64)> = seg[0].iter().map(|r| (r.t_s, r.pack_voltage_v)).collect();
        let runtime_s =
            runtime_from_log(&log, cfg.cutoff_voltage).map_err(|_| ProtocolError::NotDepleted {
                load_kg: mass,
                horizon_s: cfg.horizon_s,
            })?;
        let live: Vec<&&TelemetryRow> = seg
            .iter()
            .flatten()
            .filter(|r| r.pack_voltage_v > cfg.cutoff_voltage)
            .collect();
        let torques: Vec<f64> = live.iter().map(|r| r.torque_nm).collect();
        let (torque_mean, torque_sd) =
            torque_stats(&torques).map_err(ProtocolError::analysis(name.as_str()))?;
        let period = if log.len() > 1 {
            (log[log.len() - 1].0 - log[0].0) / (log.len() - 1) as f64
        } else {
            0.0
        };
        let mechanical_energy_j = live
            .iter()
            .map(|r| (r.torque_nm * r.velocity_rad_s).max(0.0) * period)
            .sum();
        conditions.push(BatteryRow {
            load_kg: mass,
            runtime_s,
            runtime_hms: format_hms(runtime_s),
            torque_mean,
            torque_sd,
            mechanical_energy_j,
        });
    }
    Ok(BatteryMetrics { conditions })
}
