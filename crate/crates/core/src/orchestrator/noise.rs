use serde::{Deserialize, Serialize};

use super::{
    by_segment, check, idle_both, steps_in, Metrics, Protocol, ProtocolError, TelemetryRow,
    TestReport,
};
use crate::analysis::{leq_average, leq_subtract};
use crate::hal::{DriveCommand, DriveMode, Fixture, MotorId, Rig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCondition {
    /// Unit off; the room alone.
    Floor,
    FansOnly,
    Motor1,
    Motor2,
    Both,
}

impl NoiseCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseCondition::Floor => "floor",
            NoiseCondition::FansOnly => "fans_only",
            NoiseCondition::Motor1 => "motor1",
            NoiseCondition::Motor2 => "motor2",
            NoiseCondition::Both => "both",
        }
    }

    fn running(self) -> &'static [MotorId] {
        match self {
            NoiseCondition::Floor | NoiseCondition::FansOnly => &[],
            NoiseCondition::Motor1 => &[MotorId::M1],
            NoiseCondition::Motor2 => &[MotorId::M2],
            NoiseCondition::Both => &MotorId::BOTH,
        }
    }

    /// Speeds this condition is measured at.
    fn speeds(self, cfg: &NoiseConfig) -> Vec<f64> {
        if self.running().is_empty() {
            vec![0.0]
        } else {
            cfg.speeds.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub window_s: f64,
    /// Motor speeds, rad/s.
    pub speeds: Vec<f64>,
    pub conditions: Vec<NoiseCondition>,
    pub sample_rate_hz: f64,
    /// Time to reach speed before the window opens, s.
    pub spin_up_s: f64,
    /// Fans run during motor conditions.
    pub fans_with_motors: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            window_s: 20.0,
            speeds: (1..=6).map(|k| k as f64 * 5.0).collect(),
            conditions: vec![
                NoiseCondition::Floor,
                NoiseCondition::FansOnly,
                NoiseCondition::Motor1,
                NoiseCondition::Motor2,
                NoiseCondition::Both,
            ],
            sample_rate_hz: 100.0,
            spin_up_s: 2.0,
            fans_with_motors: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        check(self.window_s > 0.0, "noise: window must be positive")?;
        check(
            self.sample_rate_hz > 0.0,
            "noise: sample rate must be positive",
        )?;
        check(self.spin_up_s >= 0.0, "noise: spin-up must be >= 0")?;
        check(
            self.speeds.iter().all(|&s| s > 0.0),
            "noise: speeds must be positive",
        )?;
        check(!self.conditions.is_empty(), "noise: no conditions")?;
        Ok(())
    }

    fn segment(condition: NoiseCondition, speed: f64) -> String {
        if condition.running().is_empty() {
            condition.as_str().to_string()
        } else {
            format!("{}@{speed}", condition.as_str())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub condition: NoiseCondition,
    /// Zero for conditions without a running motor.
    pub speed_rad_s: f64,
    /// Floor-subtracted level, or the raw level for the floor itself.
    pub leq_db: f64,
    pub floor_subtracted: bool,
    pub raw_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMetrics {
    pub floor_db: f64,
    pub rows: Vec<NoiseRow>,
}

pub fn run_noise<R: Rig + ?Sized>(
    cfg: &NoiseConfig,
    rig: &mut R,
) -> Result<TestReport, ProtocolError> {
    cfg.validate()?;
    if !cfg.conditions.contains(&NoiseCondition::Floor) {
        return Err(ProtocolError::MissingFloor);
    }
    rig.attach(Fixture::Free)?;
    let sample_every = steps_in(rig, 1.0 / cfg.sample_rate_hz).max(1);
    let window = steps_in(rig, cfg.window_s);
    let mut rows = Vec::new();
    for &condition in &cfg.conditions {
        for speed in condition.speeds(cfg) {
            let segment = NoiseConfig::segment(condition, speed);
            let fans = match condition {
                NoiseCondition::Floor => false,
                NoiseCondition::FansOnly => true,
                _ => cfg.fans_with_motors,
            };
            rig.set_fans(fans)?;
            idle_both(rig)?;
            for &m in condition.running() {
                rig.send_command(DriveCommand::new(m, DriveMode::VelocityPid, speed))?;
            }
            rig.run_for(cfg.spin_up_s)?;
            for k in 0..window {
                if k.is_multiple_of(sample_every) {
                    let level = rig.microphone()?;
                    for m in MotorId::BOTH {
                        let s = rig.sample(m)?;
                        let reference = if condition.running().contains(&m) {
                            speed
                        } else {
                            0.0
                        };
                        rows.push(TelemetryRow::from_sample(&segment, &s, reference, level));
                    }
                }
                rig.step()?;
            }
        }
    }
    idle_both(rig)?;
    let metrics = analyze_noise(cfg, &rows)?;
    Ok(TestReport::new(
        Protocol::Noise,
        cfg,
        rig.backend(),
        Metrics::Noise(metrics),
        rows,
    ))
}

pub fn analyze_noise(
    cfg: &NoiseConfig,
    rows: &[TelemetryRow],
) -> Result<NoiseMetrics, ProtocolError> {
    let segments = by_segment(rows);
    let leq = |name: &str| -> Result<f64, ProtocolError> {
        let seg = segments
            .get(name)
            .map(|m| &m[0])
            .filter(|r| !r.is_empty())
            .ok_or_else(|| ProtocolError::MissingSegment(name.to_string()))?;
        let levels: Vec<f64> = seg.iter().map(|r| r.aux).collect();
        let level = leq_average(&levels, cfg.window_s).map_err(ProtocolError::analysis(name))?;
        Ok(level.level_db)
    };
    if !segments.contains_key(NoiseCondition::Floor.as_str()) {
        return Err(ProtocolError::MissingFloor);
    }
    let floor_db = leq(NoiseCondition::Floor.as_str())?;
    let mut out = Vec::new();
    for &condition in &cfg.conditions {
        for speed in condition.speeds(cfg) {
            let name = NoiseConfig::segment(condition, speed);
            let raw_db = leq(&name)?;
            let is_floor = condition == NoiseCondition::Floor;
            let leq_db = if is_floor {
                raw_db
            } else {
                leq_subtract(raw_db, floor_db).map_err(ProtocolError::analysis(name.as_str()))?
            };
            out.push(NoiseRow {
                condition,
                speed_rad_s: speed,
                leq_db,
                floor_subtracted: !is_floor,
                raw_db,
            });
        }
    }
    Ok(NoiseMetrics {
        floor_db,
        rows: out,
    })
}
