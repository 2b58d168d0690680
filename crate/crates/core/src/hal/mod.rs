//! Backend-agnostic drive interface.
//!
//! A [`Drive`] exposes what an MD80-class controller offers over the bus:
//! torque, velocity-PID and position-PID modes, fan control and telemetry.
//! A [`Bench`] exposes the test fixture around it (load cell, microphone,
//! mechanical setup). Protocols run against anything implementing both.

pub mod frame;
mod pid;
pub mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
pub use frame::{FrameDrive, Link, SimLink};
pub use pid::{pid_step, PidGains, PidState};
pub use sim::{SensorNoise, SimDrive, SnapshotReader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum MotorId {
    /// Left motor.
    M1,
    /// Right motor.
    M2,
}

impl MotorId {
    pub const BOTH: [MotorId; 2] = [MotorId::M1, MotorId::M2];

    pub fn index(self) -> usize {
        match self {
            MotorId::M1 => 0,
            MotorId::M2 => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

impl TryFrom<u8> for MotorId {
    type Error = HalError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(MotorId::M1),
            2 => Ok(MotorId::M2),
            other => Err(HalError::UnknownMotor(other)),
        }
    }
}

impl From<MotorId> for u8 {
    fn from(m: MotorId) -> u8 {
        m.number()
    }
}

impl std::fmt::Display for MotorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "motor{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    /// Output stage disabled; zero commanded torque.
    #[default]
    Idle,
    /// Open-loop torque, target in N·m.
    Torque,
    /// Target in rad/s.
    VelocityPid,
    /// Target in rad.
    PositionPid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    pub motor: MotorId,
    pub mode: DriveMode,
    pub target: f64,
    pub timestamp: f64,
}

impl DriveCommand {
    pub fn new(motor: MotorId, mode: DriveMode, target: f64) -> Self {
        Self {
            motor,
            mode,
            target,
            timestamp: 0.0,
        }
    }

    pub fn idle(motor: MotorId) -> Self {
        Self::new(motor, DriveMode::Idle, 0.0)
    }
}

/// Which cascade stage a gain set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainLoop {
    Velocity,
    Position,
}

/// Controller tuning shipped with the drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    /// Velocity loop, error in rad/s, output in N·m.
    pub velocity: PidGains<f64>,
    /// Outer position loop, error in rad, output in rad/s.
    pub position: PidGains<f64>,
    /// Largest accepted velocity target and position-loop output, rad/s.
    pub velocity_limit: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            velocity: PidGains {
                kp: 0.08,
                ki: 1.0,
                kd: 0.0,
                integral_limit: 3.0,
            },
            position: PidGains {
                kp: 8.0,
                ki: 0.0,
                kd: 0.0,
                integral_limit: 1.0,
            },
            velocity_limit: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t: f64,
    pub motor_id: MotorId,
    pub position: f64,
    pub velocity: f64,
    pub torque: f64,
    pub current: f64,
    pub stator_temp: f64,
    pub pack_voltage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub motor: Option<MotorId>,
    /// Control step at which the latched value takes effect.
    pub effective_step: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Fault {
    #[error("plant diverged: {0}")]
    NonFinite(String),
    #[error("battery management cut the pack at the low-voltage threshold")]
    Undervoltage,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HalError {
    #[error("unknown motor id {0}")]
    UnknownMotor(u8),
    #[error("{what} {value} outside [-{limit}, {limit}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("drive fault: {0}")]
    Fault(Fault),
    #[error("backend timeout waiting for {0}")]
    Timeout(&'static str),
    #[error("wire codec: {0}")]
    Codec(#[from] CodecError),
    #[error("unknown backend {0:?} (expected \"sim\" or \"frame\")")]
    UnknownBackend(String),
}

impl HalError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            HalError::UnknownMotor(_) => "E_UNKNOWN_MOTOR",
            HalError::OutOfRange { .. } => "E_RANGE",
            HalError::Fault(Fault::NonFinite(_)) => "E_FAULT_DIVERGED",
            HalError::Fault(Fault::Undervoltage) => "E_FAULT_UNDERVOLTAGE",
            HalError::Timeout(_) => "E_TIMEOUT",
            HalError::Codec(_) => "E_CODEC",
            HalError::UnknownBackend(_) => "E_BACKEND",
        }
    }
}

/// Mechanical setup of the bench around the unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fixture {
    /// Pulleys removed, rotors spin freely.
    Free,
    /// Pulley cable anchored to a crane scale; rotors at stall.
    LoadCell,
    /// Each motor raises a mass over a redirect pulley.
    HangingMass { mass_kg: f64 },
    /// Both pulleys joined through a redirect pulley.
    CoupledCable,
}

pub trait Drive {
    fn backend(&self) -> &'static str;

    /// Control loop period, s.
    fn control_period(&self) -> f64;

    /// Drive clock, s.
    fn now(&self) -> f64;

    /// Latches a mode and target; takes effect at the next control step.
    fn send_command(&mut self, cmd: DriveCommand) -> Result<Ack, HalError>;

    fn set_gains(
        &mut self,
        motor: MotorId,
        stage: GainLoop,
        gains: PidGains<f64>,
    ) -> Result<Ack, HalError>;

    fn set_fans(&mut self, on: bool) -> Result<Ack, HalError>;

    fn sample(&mut self, motor: MotorId) -> Result<TelemetrySample, HalError>;

    /// Runs one control period.
    fn step(&mut self) -> Result<(), HalError>;

    /// Runs whole control periods covering `seconds`.
    fn run_for(&mut self, seconds: f64) -> Result<(), HalError> {
        let steps = (seconds / self.control_period()).round() as u64;
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Instruments and fixture around the drive.
pub trait Bench {
    fn attach(&mut self, fixture: Fixture) -> Result<(), HalError>;

    /// Crane-scale reading of the cable on `motor`'s pulley, N.
    fn load_cell(&mut self, motor: MotorId, pulley_radius: f64) -> Result<f64, HalError>;

    /// Instantaneous sound pressure level at the microphone, dB.
    fn microphone(&mut self) -> Result<f64, HalError>;

    /// Swaps in a fully charged pack and clears an undervoltage latch.
    fn recharge(&mut self) -> Result<(), HalError>;
}

/// A drive mounted on a bench.
pub trait Rig: Drive + Bench {}

impl<R: Drive + Bench + ?Sized> Rig for R {}

impl<R: Drive + ?Sized> Drive for Box<R> {
    fn backend(&self) -> &'static str {
        (**self).backend()
    }
    fn control_period(&self) -> f64 {
        (**self).control_period()
    }
    fn now(&self) -> f64 {
        (**self).now()
    }
    fn send_command(&mut self, cmd: DriveCommand) -> Result<Ack, HalError> {
        (**self).send_command(cmd)
    }
    fn set_gains(
        &mut self,
        motor: MotorId,
        stage: GainLoop,
        gains: PidGains<f64>,
    ) -> Result<Ack, HalError> {
        (**self).set_gains(motor, stage, gains)
    }
    fn set_fans(&mut self, on: bool) -> Result<Ack, HalError> {
        (**self).set_fans(on)
    }
    fn sample(&mut self, motor: MotorId) -> Result<TelemetrySample, HalError> {
        (**self).sample(motor)
    }
    fn step(&mut self) -> Result<(), HalError> {
        (**self).step()
    }
}

impl<R: Bench + ?Sized> Bench for Box<R> {
    fn attach(&mut self, fixture: Fixture) -> Result<(), HalError> {
        (**self).attach(fixture)
    }
    fn load_cell(&mut self, motor: MotorId, pulley_radius: f64) -> Result<f64, HalError> {
        (**self).load_cell(motor, pulley_radius)
    }
    fn microphone(&mut self) -> Result<f64, HalError> {
        (**self).microphone()
    }
    fn recharge(&mut self) -> Result<(), HalError> {
        (**self).recharge()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// In-process plant.
    Sim,
    /// Plant behind the register-protocol codec.
    Frame,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Sim => "sim",
            BackendKind::Frame => "frame",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = HalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(BackendKind::Sim),
            "frame" => Ok(BackendKind::Frame),
            other => Err(HalError::UnknownBackend(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motor_ids() {
        assert_eq!(MotorId::try_from(1).unwrap(), MotorId::M1);
        assert_eq!(MotorId::try_from(2).unwrap(), MotorId::M2);
        assert_eq!(MotorId::try_from(3), Err(HalError::UnknownMotor(3)));
        assert_eq!(serde_json::to_string(&MotorId::M2).unwrap(), "2");
    }

    #[test]
    fn backend_selection() {
        assert_eq!("sim".parse::<BackendKind>().unwrap(), BackendKind::Sim);
        assert_eq!("frame".parse::<BackendKind>().unwrap(), BackendKind::Frame);
        let err = "can0".parse::<BackendKind>().unwrap_err();
        assert_eq!(err.code(), "E_BACKEND");
    }
}
