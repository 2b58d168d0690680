use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{
    by_segment, check, log_both, steps_in, Metrics, Protocol, ProtocolError, TelemetryRow,
    TestReport,
};
use crate::analysis::{gain_phase_over, log_space_grid, Sampled};
use crate::hal::{DriveCommand, DriveMode, Fixture, MotorId, Rig};

/// Consecutive samples beyond the divergence bound that abort a point.
const DIVERGENCE_RUN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySweepConfig {
    /// Reference amplitudes, rad/s.
    pub amplitudes: Vec<f64>,
    /// Excitation frequencies, Hz.
    pub frequencies: Vec<f64>,
    /// Measured cycles per point; one more transient cycle runs first and is discarded.
    pub cycles_per_point: usize,
    pub average_motors: bool,
    pub samples_per_cycle: usize,
    /// Rest at zero velocity between points, s.
    pub settle_s: f64,
    /// A point diverges when |measured| stays above this multiple of the amplitude.
    pub divergence_factor: f64,
}

impl Default for VelocitySweepConfig {
    fn default() -> Self {
        Self {
            amplitudes: (1..=6).map(|k| k as f64 * 5.0).collect(),
            frequencies: log_space_grid(0.1, 10.0, 20).expect("valid grid"),
            cycles_per_point: 10,
            average_motors: true,
            samples_per_cycle: 50,
            settle_s: 1.0,
            divergence_factor: 2.0,
        }
    }
}

impl VelocitySweepConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        check(!self.amplitudes.is_empty(), "velocity_sweep: no amplitudes")?;
        check(
            self.amplitudes.iter().all(|&a| a > 0.0),
            "velocity_sweep: amplitudes must be positive",
        )?;
        check(
            !self.frequencies.is_empty(),
            "velocity_sweep: no frequencies",
        )?;
        check(
            self.frequencies.iter().all(|&f| f > 0.0),
            "velocity_sweep: frequencies must be positive",
        )?;
        check(
            self.cycles_per_point >= 3,
            "velocity_sweep: at least 3 cycles per point",
        )?;
        check(
            self.samples_per_cycle > 10,
            "velocity_sweep: need more than 10 samples per cycle",
        )?;
        check(self.settle_s >= 0.0, "velocity_sweep: settle must be >= 0")?;
        check(
            self.divergence_factor > 1.0,
            "velocity_sweep: divergence factor must exceed 1",
        )?;
        Ok(())
    }

    fn segment(ai: usize, fi: usize) -> String {
        format!("a{ai}_f{fi}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodeRow {
    /// `None` for the two-motor average.
    pub motor: Option<MotorId>,
    pub amplitude: f64,
    pub frequency: f64,
    /// Absent when the point diverged.
    pub gain_db: Option<f64>,
    pub phase_deg: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocitySweepMetrics {
    /// Reported points: the two-motor average, or per-motor rows when averaging is off.
    pub points: Vec<BodeRow>,
    pub per_motor: Vec<BodeRow>,
}

pub fn run_velocity_sweep<R: Rig + ?Sized>(
    cfg: &VelocitySweepConfig,
    rig: &mut R,
) -> Result<TestReport, ProtocolError> {
    cfg.validate()?;
    rig.attach(Fixture::Free)?;
    let dt = rig.control_period();
    let mut rows = Vec::new();
    for (ai, &amp) in cfg.amplitudes.iter().enumerate() {
        for (fi, &freq) in cfg.frequencies.iter().enumerate() {
            let segment = VelocitySweepConfig::segment(ai, fi);
            let log_every =
                ((1.0 / (cfg.samples_per_cycle as f64 * freq * dt)).round() as u64).max(1);
            let total = steps_in(rig, (cfg.cycles_per_point + 1) as f64 / freq);
            for k in 0..total {
                let reference = amp * (TAU * freq * k as f64 * dt).sin();
                if k.is_multiple_of(log_every) {
                    log_both(rig, &segment, [reference; 2], [0.0; 2], &mut rows)?;
                }
                for m in MotorId::BOTH {
                    rig.send_command(DriveCommand::new(m, DriveMode::VelocityPid, reference))?;
                }
                rig.step()?;
            }
            for m in MotorId::BOTH {
                rig.send_command(DriveCommand::new(m, DriveMode::VelocityPid, 0.0))?;
            }
            rig.run_for(cfg.settle_s)?;
        }
    }
    let metrics = analyze_velocity_sweep(cfg, &rows)?;
    Ok(TestReport::new(
        Protocol::VelocitySweep,
        cfg,
        rig.backend(),
        Metrics::VelocitySweep(metrics),
        rows,
    ))
}

fn bode_point(
    cfg: &VelocitySweepConfig,
    rows: &[&TelemetryRow],
    motor: MotorId,
    amp: f64,
    freq: f64,
) -> Result<BodeRow, ProtocolError> {
    let limit = cfg.divergence_factor * amp;
    let mut run = 0;
    let mut diverged = false;
    for r in rows {
        run = if r.velocity_rad_s.abs() > limit {
            run + 1
        } else {
            0
        };
        diverged |= run >= DIVERGENCE_RUN;
    }
    let mut row = BodeRow {
        motor: Some(motor),
        amplitude: amp,
        frequency: freq,
        gain_db: None,
        phase_deg: None,
        diverged,
    };
    if diverged {
        return Ok(row);
    }
    let t_start = rows[0].t_s;
    let kept: Vec<&&TelemetryRow> = rows
        .iter()
        .filter(|r| r.t_s - t_start >= 1.0 / freq - 1e-9)
        .collect();
    let context = format!("{motor} at {amp} rad/s, {freq} Hz");
    if kept.len() < 2 {
        return Err(ProtocolError::MissingSegment(context));
    }
    let t0 = kept[0].t_s - t_start;
    let period = (kept[kept.len() - 1].t_s - kept[0].t_s) / (kept.len() - 1) as f64;
    let reference: Vec<f64> = kept.iter().map(|r| r.reference).collect();
    let measured: Vec<f64> = kept.iter().map(|r| r.velocity_rad_s).collect();
    let (gain, phase) = gain_phase_over(
        &Sampled::new(t0, period, &reference),
        &Sampled::new(t0, period, &measured),
        freq,
        cfg.cycles_per_point,
    )
    .map_err(ProtocolError::analysis(context))?;
    row.gain_db = Some(gain);
    row.phase_deg = Some(phase);
    Ok(row)
}

pub fn analyze_velocity_sweep(
    cfg: &VelocitySweepConfig,
    rows: &[TelemetryRow],
) -> Result<VelocitySweepMetrics, ProtocolError> {
    let segments = by_segment(rows);
    let mut points = Vec::new();
    let mut per_motor = Vec::new();
    for (ai, &amp) in cfg.amplitudes.iter().enumerate() {
        for (fi, &freq) in cfg.frequencies.iter().enumerate() {
            let name = VelocitySweepConfig::segment(ai, fi);
            let seg = segments
                .get(name.as_str())
                .filter(|s| s.iter().all(|m| !m.is_empty()))
                .ok_or_else(|| ProtocolError::MissingSegment(name.clone()))?;
            let pair = [
                bode_point(cfg, &seg[0], MotorId::M1, amp, freq)?,
                bode_point(cfg, &seg[1], MotorId::M2, amp, freq)?,
            ];
            per_motor.extend(pair);
            if cfg.average_motors {
                let mean = |a: Option<f64>, b: Option<f64>| Some((a? + b?) / 2.0);
                let diverged = pair[0].diverged || pair[1].diverged;
                points.push(BodeRow {
                    motor: None,
                    amplitude: amp,
                    frequency: freq,
                    gain_db: if diverged {
                        None
                    } else {
                        mean(pair[0].gain_db, pair[1].gain_db)
                    },
                    phase_deg: if diverged {
                        None
                    } else {
                        mean(pair[0].phase_deg, pair[1].phase_deg)
                    },
                    diverged,
                });
            } else {
                points.extend(pair);
            }
        }
    }
    Ok(VelocitySweepMetrics { points, per_motor })
}
