use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{
    by_segment, check, idle_both, log_both, steps_in, Metrics, Protocol, ProtocolError,
    TelemetryRow, TestReport,
};
use crate::analysis::time_to_threshold;
use crate::hal::{DriveCommand, DriveMode, Fixture, MotorId, Rig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    /// Constant torque command on motor 1, N·m.
    pub hold_torque: f64,
    /// Motor 2 position sinusoid amplitude, rad.
    pub position_amplitude: f64,
    pub position_period: f64,
    pub cutoff_temp: f64,
    pub pre_settle_s: f64,
    /// Fan state of each phase, run in order.
    pub phases: Vec<bool>,
    /// Rise timer starts at this temperature, °C.
    pub rise_from: f64,
    /// Cooling is timed from the cutoff down to each of these, °C.
    pub fall_to: Vec<f64>,
    /// Cooling stops once the hot motor reads at or below this, °C.
    pub cool_until: f64,
    pub max_heat_s: f64,
    pub max_cool_s: f64,
    pub log_period_s: f64,
    /// Abort when any reading exceeds the cutoff by more than this, °C.
    pub safety_margin: f64,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self {
            hold_torque: 1.5,
            position_amplitude: TAU,
            position_period: 4.0,
            cutoff_temp: 80.0,
            pre_settle_s: 300.0,
            phases: vec![true, false],
            rise_from: 30.0,
            fall_to: vec![30.0, 40.0],
            cool_until: 29.0,
            max_heat_s: 3600.0,
            max_cool_s: 9000.0,
            log_period_s: 1.0,
            safety_margin: 5.0,
        }
    }
}

impl ThermalConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        check(self.hold_torque >= 0.0, "thermal: hold torque must be >= 0")?;
        check(
            self.cutoff_temp < 120.0,
            "thermal: cutoff must stay below 120 °C",
        )?;
        check(
            self.rise_from < self.cutoff_temp,
            "thermal: rise_from must be below the cutoff",
        )?;
        check(
            self.fall_to.iter().all(|&t| t < self.cutoff_temp),
            "thermal: fall targets must be below the cutoff",
        )?;
        check(
            self.position_period > 0.0,
            "thermal: position period must be positive",
        )?;
        check(!self.phases.is_empty(), "thermal: no phases")?;
        check(self.pre_settle_s >= 0.0, "thermal: pre-settle must be >= 0")?;
        check(
            self.max_heat_s > 0.0 && self.max_cool_s > 0.0,
            "thermal: horizons must be positive",
        )?;
        check(
            self.log_period_s > 0.0,
            "thermal: log period must be positive",
        )?;
        check(
            self.safety_margin >= 0.0,
            "thermal: safety margin must be >= 0",
        )?;
        Ok(())
    }

    fn tag(i: usize, fans: bool) -> String {
        format!(
            "phase{}_{}",
            i + 1,
            if fans { "fans_on" } else { "fans_off" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum PhaseOutcome {
    Complete,
    /// The cutoff was not reached within the heating horizon.
    NoRise {
        last_temp: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallTime {
    pub to_c: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalPhase {
    pub fans_on: bool,
    pub outcome: PhaseOutcome,
    /// First motor to reach the cutoff.
    pub hot_motor: Option<MotorId>,
    pub rise_s: Option<f64>,
    pub falls: Vec<FallTime>,
    pub peak_temp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalMetrics {
    pub phases: Vec<ThermalPhase>,
    pub max_logged_temp: f64,
}

fn hottest(rows: &[TelemetryRow]) -> f64 {
    rows.iter()
        .map(|r| r.stator_temp_c)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn run_thermal<R: Rig + ?Sized>(
    cfg: &ThermalConfig,
    rig: &mut R,
) -> Result<TestReport, ProtocolError> {
    cfg.validate()?;
    let limit = cfg.cutoff_temp + cfg.safety_margin;
    let mut rows = Vec::new();
    let log_every = steps_in(rig, cfg.log_period_s).max(1);
    let dt = rig.control_period();
    rig.attach(Fixture::CoupledCable)?;
    for (i, &fans) in cfg.phases.iter().enumerate() {
        let tag = ThermalConfig::tag(i, fans);
        rig.set_fans(fans)?;
        idle_both(rig)?;

        let settle = format!("{tag}/settle");
        for k in 0..steps_in(rig, cfg.pre_settle_s) {
            if k.is_multiple_of(log_every) {
                log_both(rig, &settle, [0.0; 2], [0.0; 2], &mut rows)?;
            }
            rig.step()?;
        }

        let heat = format!("{tag}/heat");
        let max_heat = steps_in(rig, cfg.max_heat_s);
        rig.send_command(DriveCommand::new(
            MotorId::M1,
            DriveMode::Torque,
            cfg.hold_torque,
        ))?;
        let mut reached = false;
        for k in 0..=max_heat {
            let position =
                cfg.position_amplitude * (TAU * k as f64 * dt / cfg.position_period).sin();
            if k.is_multiple_of(log_every) {
                let s = log_both(rig, &heat, [cfg.hold_torque, position], [0.0; 2], &mut rows)?;
                let t = s[0].stator_temp.max(s[1].stator_temp);
                if t > limit {
                    idle_both(rig)?;
                    return Err(ProtocolError::SafetyCutoff { temp: t, limit });
                }
                if t >= cfg.cutoff_temp {
                    reached = true;
                    break;
                }
            }
            if k == max_heat {
                break;
            }
            rig.send_command(DriveCommand::new(
                MotorId::M2,
                DriveMode::PositionPid,
                position,
            ))?;
            rig.step()?;
        }
        idle_both(rig)?;
        if !reached {
            continue;
        }

        let cool = format!("{tag}/cool");
        let hot = {
            let n = rows.len();
            if rows[n - 2].stator_temp_c >= rows[n - 1].stator_temp_c {
                MotorId::M1
            } else {
                MotorId::M2
            }
        };
        for k in 0..=steps_in(rig, cfg.max_cool_s) {
            if k.is_multiple_of(log_every) {
                let s = log_both(rig, &cool, [0.0; 2], [0.0; 2], &mut rows)?;
                let t = s[0].stator_temp.max(s[1].stator_temp);
                if t > limit {
                    return Err(ProtocolError::SafetyCutoff { temp: t, limit });
                }
                if s[hot.index()].stator_temp <= cfg.cool_until {
                    break;
                }
            }
            rig.step()?;
        }
    }
    let metrics = analyze_thermal(cfg, &rows)?;
    Ok(TestReport::new(
        Protocol::Thermal,
        cfg,
        rig.backend(),
        Metrics::Thermal(metrics),
        rows,
    ))
}

pub fn analyze_thermal(
    cfg: &ThermalConfig,
    rows: &[TelemetryRow],
) -> Result<ThermalMetrics, ProtocolError> {
    let segments = by_segment(rows);
    let mut phases = Vec::new();
    for (i, &fans) in cfg.phases.iter().enumerate() {
        let tag = ThermalConfig::tag(i, fans);
        let heat_name = format!("{tag}/heat");
        let heat = segments
            .get(heat_name.as_str())
            .filter(|m| m.iter().all(|r| !r.is_empty()))
            .ok_or(ProtocolError::MissingSegment(heat_name))?;
        let peak_of = |m: &Vec<&TelemetryRow>| {
            m.iter()
                .map(|r| r.stator_temp_c)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let peaks = [peak_of(&heat[0]), peak_of(&heat[1])];
        let hot = if peaks[0] >= peaks[1] {
            MotorId::M1
        } else {
            MotorId::M2
        };
        let hot_heat = &heat[hot.index()];
        let last = hot_heat[hot_heat.len() - 1];
        let cool = segments.get(format!("{tag}/cool").as_str());
        let phase_rows = rows.iter().filter(|r| r.segment.starts_with(&tag));
        let peak_temp = phase_rows
            .map(|r| r.stator_temp_c)
            .fold(f64::NEG_INFINITY, f64::max);

        if peaks[hot.index()] < cfg.cutoff_temp {
            phases.push(ThermalPhase {
                fans_on: fans,
                outcome: PhaseOutcome::NoRise {
                    last_temp: last.stator_temp_c,
                },
                hot_motor: None,
                rise_s: None,
                falls: Vec::new(),
                peak_temp,
            });
            continue;
        }
        let heat_log: Vec<(f64, f64)> = hot_heat.iter().map(|r| (r.t_s, r.stator_temp_c)).collect();
        let rise_s = time_to_threshold(&heat_log, cfg.rise_from, cfg.cutoff_temp).ok();
        let mut cool_log = vec![(last.t_s, last.stator_temp_c)];
        if let Some(c) = cool {
            cool_log.extend(c[hot.index()].iter().map(|r| (r.t_s, r.stator_temp_c)));
        }
        let falls = cfg
            .fall_to
            .iter()
            .map(|&to| FallTime {
                to_c: to,
                seconds: time_to_threshold(&cool_log, cfg.cutoff_temp, to).ok(),
            })
            .collect();
        phases.push(ThermalPhase {
            fans_on: fans,
            outcome: PhaseOutcome::Complete,
            hot_motor: Some(hot),
            rise_s,
            falls,
            peak_temp,
        });
    }
    Ok(ThermalMetrics {
        phases,
        max_logged_temp: hottest(rows),
    })
}
