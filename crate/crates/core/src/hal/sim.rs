//! In-process backend: drive controllers stepping a [`Plant`].

use std::collections::VecDeque;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pid::{pid_step, PidGains, PidState};
use super::{
    Ack, Bench, Drive, DriveCommand, DriveConfig, DriveMode, Fault, Fixture, GainLoop, HalError,
    MotorId, TelemetrySample,
};
use crate::plant::{cable_tension, Load, Plant, PlantError, PlantParams};
use crate::scalar::{cast, Scalar};

/// Standard deviations of the bench instruments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNoise {
    /// Crane scale, N.
    pub tension_sigma: f64,
    /// Stator thermistor, °C.
    pub temperature_sigma: f64,
    /// Sound analyzer, dB.
    pub acoustic_sigma: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            tension_sigma: 0.1,
            temperature_sigma: 0.2,
            acoustic_sigma: 0.1,
        }
    }
}

impl SensorNoise {
    pub fn none() -> Self {
        Self {
            tension_sigma: 0.0,
            temperature_sigma: 0.0,
            acoustic_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Pending {
    Command(DriveCommand),
    Gains(MotorId, GainLoop, PidGains<f64>),
    Fans(bool),
}

#[derive(Debug, Clone)]
struct Channel<T> {
    mode: DriveMode,
    target: T,
    velocity_gains: PidGains<T>,
    position_gains: PidGains<T>,
    velocity_pid: PidState<T>,
    position_pid: PidState<T>,
}

/// Read-only view of the latest noise-free state, for observers on other threads.
#[derive(Debug, Clone)]
pub struct SnapshotReader(Arc<RwLock<Option<[TelemetrySample; 2]>>>);

impl SnapshotReader {
    pub fn latest(&self) -> Option<[TelemetrySample; 2]> {
        *self.0.read().expect("snapshot lock poisoned")
    }
}

/// Simulated drive pair on a simulated bench.
#[derive(Debug)]
pub struct SimDrive<T: Scalar> {
    plant: Plant<T>,
    channels: [Channel<T>; 2],
    velocity_limit: f64,
    pending: VecDeque<Pending>,
    rng: ChaCha8Rng,
    noise: SensorNoise,
    fault: Option<Fault>,
    snapshot: Option<Arc<RwLock<Option<[TelemetrySample; 2]>>>>,
}

impl<T: Scalar> SimDrive<T> {
    pub fn new(
        params: PlantParams<T>,
        drive: &DriveConfig,
        noise: SensorNoise,
        seed: u64,
    ) -> Result<Self, PlantError> {
        if !drive.velocity.is_valid() || !drive.position.is_valid() {
            return Err(PlantError::Config(
                "PID gains must be >= 0 with a positive integral limit",
            ));
        }
        let plant = Plant::new(params)?;
        let channel = Channel {
            mode: DriveMode::Idle,
            target: T::zero(),
            velocity_gains: drive.velocity.cast(),
            position_gains: drive.position.cast(),
            velocity_pid: PidState::default(),
            position_pid: PidState::default(),
        };
        Ok(Self {
            plant,
            channels: [channel.clone(), channel],
            velocity_limit: drive.velocity_limit,
            pending: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            fault: None,
            snapshot: None,
        })
    }

    pub fn plant(&self) -> &Plant<T> {
        &self.plant
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn mode(&self, motor: MotorId) -> DriveMode {
        self.channels[motor.index()].mode
    }

    pub fn peak_torque(&self, motor: MotorId) -> f64 {
        self.plant
            .params()
            .motor(motor.index())
            .peak_torque
            .as_f64()
    }

    pub fn velocity_limit(&self) -> f64 {
        self.velocity_limit
    }

    /// Starts publishing a noise-free snapshot after every step.
    pub fn snapshot_reader(&mut self) -> SnapshotReader {
        let cell = self
            .snapshot
            .get_or_insert_with(|| Arc::new(RwLock::new(None)))
            .clone();
        SnapshotReader(cell)
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma)
                .expect("sigma is positive and finite")
                .sample(&mut self.rng)
        } else {
            0.0
        }
    }

    fn check_fault(&self) -> Result<(), HalError> {
        match &self.fault {
            Some(f) => Err(HalError::Fault(f.clone())),
            None => Ok(()),
        }
    }

    fn validate(&self, cmd: &DriveCommand) -> Result<(), HalError> {
        if !cmd.target.is_finite() {
            return Err(HalError::OutOfRange {
                what: "target",
                value: cmd.target,
                limit: f64::INFINITY,
            });
        }
        let limit = match cmd.mode {
            DriveMode::Torque => Some(("torque target", self.peak_torque(cmd.motor))),
            DriveMode::VelocityPid => Some(("velocity target", self.velocity_limit)),
            DriveMode::Idle | DriveMode::PositionPid => None,
        };
        if let Some((what, limit)) = limit {
            if cmd.target.abs() > limit {
                return Err(HalError::OutOfRange {
                    what,
                    value: cmd.target,
                    limit,
                });
            }
        }
        Ok(())
    }

    fn ack(&self, motor: Option<MotorId>) -> Ack {
        Ack {
            motor,
            effective_step: self.plant.state().step_count + 1,
        }
    }

    fn apply_pending(&mut self) {
        while let Some(p) = self.pending.pop_front() {
            match p {
                Pending::Command(cmd) => {
                    let ch = &mut self.channels[cmd.motor.index()];
                    if ch.mode != cmd.mode {
                        ch.velocity_pid = PidState::default();
                        ch.position_pid = PidState::default();
                    }
                    ch.mode = cmd.mode;
                    ch.target = T::lit(cmd.target);
                }
                Pending::Gains(motor, stage, gains) => {
                    let ch = &mut self.channels[motor.index()];
                    match stage {
                        GainLoop::Velocity => ch.velocity_gains = gains.cast(),
                        GainLoop::Position => ch.position_gains = gains.cast(),
                    }
                }
                Pending::Fans(on) => self.plant.set_fans(on),
            }
        }
    }

    fn torque_command(&mut self, i: usize, dt: T) -> T {
        let state = self.plant.state().motors[i];
        let peak = self.plant.params().motor(i).peak_torque;
        let vlim = T::lit(self.velocity_limit);
        let ch = &mut self.channels[i];
        match ch.mode {
            DriveMode::Idle => T::zero(),
            DriveMode::Torque => ch.target,
            DriveMode::VelocityPid => {
                let (out, st) = pid_step(
                    ch.target - state.velocity,
                    &ch.velocity_gains,
                    &ch.velocity_pid,
                    dt,
                    peak,
                );
                ch.velocity_pid = st;
                out
            }
            DriveMode::PositionPid => {
                let (v_sp, pst) = pid_step(
                    ch.target - state.position,
                    &ch.position_gains,
                    &ch.position_pid,
                    dt,
                    vlim,
                );
                ch.position_pid = pst;
                let (out, vst) = pid_step(
                    v_sp - state.velocity,
                    &ch.velocity_gains,
                    &ch.velocity_pid,
                    dt,
                    peak,
                );
                ch.velocity_pid = vst;
                out
            }
        }
    }

    fn clean_sample(&self, motor: MotorId) -> TelemetrySample {
        let s = self.plant.state();
        let m = &s.motors[motor.index()];
        let kt = self.plant.params().motor(motor.index()).kt;
        TelemetrySample {
            t: s.sim_time,
            motor_id: motor,
            position: m.position.as_f64(),
            velocity: m.velocity.as_f64(),
            torque: m.applied_torque.as_f64(),
            current: (m.applied_torque / kt).as_f64(),
            stator_temp: m.stator_temp.as_f64(),
            pack_voltage: s.pack_voltage.as_f64(),
        }
    }
}

impl<T: Scalar> Drive for SimDrive<T> {
    fn backend(&self) -> &'static str {
        "sim"
    }

    fn control_period(&self) -> f64 {
        self.plant.dt()
    }

    fn now(&self) -> f64 {
        self.plant.state().sim_time
    }

    fn send_command(&mut self, cmd: DriveCommand) -> Result<Ack, HalError> {
        self.check_fault()?;
        self.validate(&cmd)?;
        self.pending.push_back(Pending::Command(cmd));
        Ok(self.ack(Some(cmd.motor)))
    }

    fn set_gains(
        &mut self,
        motor: MotorId,
        stage: GainLoop,
        gains: PidGains<f64>,
    ) -> Result<Ack, HalError> {
        if !gains.is_valid() {
            return Err(HalError::OutOfRange {
                what: "gain",
                value: gains
                    .kp
                    .min(gains.ki)
                    .min(gains.kd)
                    .min(gains.integral_limit),
                limit: f64::INFINITY,
            });
        }
        self.pending.push_back(Pending::Gains(motor, stage, gains));
        Ok(self.ack(Some(motor)))
    }

    fn set_fans(&mut self, on: bool) -> Result<Ack, HalError> {
        self.pending.push_back(Pending::Fans(on));
        Ok(self.ack(None))
    }

    fn sample(&mut self, motor: MotorId) -> Result<TelemetrySample, HalError> {
        let mut s = self.clean_sample(motor);
        s.stator_temp += self.gaussian(self.noise.temperature_sigma);
        Ok(s)
    }

    fn step(&mut self) -> Result<(), HalError> {
        self.apply_pending();
        let dt = T::lit(self.plant.dt());
        let cmds = [self.torque_command(0, dt), self.torque_command(1, dt)];
        if let Err(e) = self.plant.step(cmds) {
            let fault = Fault::NonFinite(e.to_string());
            self.fault = Some(fault.clone());
            return Err(HalError::Fault(fault));
        }
        if self.plant.depleted() && self.fault.is_none() {
            self.fault = Some(Fault::Undervoltage);
            for ch in &mut self.channels {
                ch.mode = DriveMode::Idle;
            }
        }
        if let Some(cell) = &self.snapshot {
            let snap = [
                self.clean_sample(MotorId::M1),
                self.clean_sample(MotorId::M2),
            ];
            *cell.write().expect("snapshot lock poisoned") = Some(snap);
        }
        Ok(())
    }
}

impl<T: Scalar> Bench for SimDrive<T> {
    fn attach(&mut self, fixture: Fixture) -> Result<(), HalError> {
        let load = match fixture {
            Fixture::Free => Load::Free,
            Fixture::LoadCell => Load::Blocked,
            Fixture::HangingMass { mass_kg } => {
                if !(mass_kg >= 0.0 && mass_kg.is_finite()) {
                    return Err(HalError::OutOfRange {
                        what: "mass",
                        value: mass_kg,
                        limit: f64::MAX,
                    });
                }
                Load::HangingMass {
                    mass: T::lit(mass_kg),
                }
            }
            Fixture::CoupledCable => Load::CoupledCable,
        };
        self.plant.set_load(load);
        Ok(())
    }

    fn load_cell(&mut self, motor: MotorId, pulley_radius: f64) -> Result<f64, HalError> {
        let torque: T = self.plant.state().motors[motor.index()].applied_torque;
        let tension =
            cable_tension(torque, T::lit(pulley_radius)).map_err(|_| HalError::OutOfRange {
                what: "pulley radius",
                value: pulley_radius,
                limit: f64::MAX,
            })?;
        Ok(cast::<T, f64>(tension) + self.gaussian(self.noise.tension_sigma))
    }

    fn microphone(&mut self) -> Result<f64, HalError> {
        Ok(self.plant.sound_level().as_f64() + self.gaussian(self.noise.acoustic_sigma))
    }

    fn recharge(&mut self) -> Result<(), HalError> {
        self.plant.recharge();
        if self.fault == Some(Fault::Undervoltage) {
            self.fault = None;
        }
        for ch in &mut self.channels {
            ch.mode = DriveMode::Idle;
            ch.target = T::zero();
            ch.velocity_pid = PidState::default();
            ch.position_pid = PidState::default();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive() -> SimDrive<f64> {
        SimDrive::new(
            PlantParams::default(),
            &DriveConfig::default(),
            SensorNoise::none(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn torque_command_latches_next_step() {
        let mut d = drive();
        d.attach(Fixture::LoadCell).unwrap();
        let ack = d
            .send_command(DriveCommand::new(MotorId::M1, DriveMode::Torque, 1.0))
            .unwrap();
        assert_eq!(ack.effective_step, 1);
        assert_eq!(d.sample(MotorId::M1).unwrap().torque, 0.0);
        d.step().unwrap();
        assert!((d.sample(MotorId::M1).unwrap().torque - 0.795).abs() < 1e-12);
    }

    #[test]
    fn torque_above_peak_is_rejected_without_side_effects() {
        let mut d = drive();
        let err = d
            .send_command(DriveCommand::new(MotorId::M1, DriveMode::Torque, 5.0))
            .unwrap_err();
        assert_eq!(err.code(), "E_RANGE");
        d.step().unwrap();
        assert_eq!(d.mode(MotorId::M1), DriveMode::Idle);
    }

    #[test]
    fn velocity_mode_settles_at_target() {
        let mut d = drive();
        d.send_command(DriveCommand::new(MotorId::M2, DriveMode::VelocityPid, 30.0))
            .unwrap();
        d.run_for(1.0).unwrap();
        for _ in 0..100 {
            d.run_for(0.01).unwrap();
            let v = d.sample(MotorId::M2).unwrap().velocity;
            assert!((v - 30.0).abs() <= 0.1, "{v}");
        }
    }

    #[test]
    fn idle_plant_samples() {
        let mut d = drive();
        d.run_for(0.5).unwrap();
        let s = d.sample(MotorId::M1).unwrap();
        assert_eq!(s.velocity, 0.0);
        assert_eq!(s.torque, 0.0);
        assert!((s.stator_temp - 23.0).abs() < 1e-9);
    }

    #[test]
    fn stall_current_from_kt() {
        let mut d = drive();
        d.attach(Fixture::LoadCell).unwrap();
        // command that yields 1.5 N·m delivered on motor 1
        let cmd = (1.5 + 0.120) / 0.915;
        d.send_command(DriveCommand::new(MotorId::M1, DriveMode::Torque, cmd))
            .unwrap();
        d.step().unwrap();
        let s = d.sample(MotorId::M1).unwrap();
        assert!((s.torque - 1.5).abs() < 1e-12);
        assert!((s.current - 14.92).abs() < 0.02, "{}", s.current);
    }

    #[test]
    fn fans_switch_thermal_and_acoustic_regimes() {
        let mut d = drive();
        d.set_fans(false).unwrap();
        d.step().unwrap();
        assert_eq!(
            d.microphone().unwrap(),
            d.plant().params().acoustic.room_floor
        );
        d.set_fans(true).unwrap();
        d.step().unwrap();
        assert!(d.microphone().unwrap() > 43.0);
    }

    #[test]
    fn mode_change_resets_controller_state() {
        let mut d = drive();
        d.send_command(DriveCommand::new(MotorId::M1, DriveMode::VelocityPid, 20.0))
            .unwrap();
        d.run_for(0.2).unwrap();
        assert!(d.channels[0].velocity_pid.integral > 0.05);
        let v = d.sample(MotorId::M1).unwrap().velocity;
        d.send_command(DriveCommand::new(MotorId::M1, DriveMode::Torque, 0.0))
            .unwrap();
        d.send_command(DriveCommand::new(MotorId::M1, DriveMode::VelocityPid, 0.0))
            .unwrap();
        d.step().unwrap();
        // the integral holds a single step of accumulation
        let ki = DriveConfig::default().velocity.ki;
        assert!((d.channels[0].velocity_pid.integral - ki * (0.0 - v) * 1e-3).abs() < 1e-12);
    }

    #[test]
    fn snapshot_reader_sees_steps() {
        let mut d = drive();
        let reader = d.snapshot_reader();
        assert!(reader.latest().is_none());
        d.send_command(DriveCommand::new(MotorId::M1, DriveMode::VelocityPid, 10.0))
            .unwrap();
        d.run_for(0.1).unwrap();
        let snap = std::thread::spawn(move || reader.latest())
            .join()
            .unwrap()
            .unwrap();
        assert!((snap[0].t - 0.1).abs() < 1e-9);
        assert!(snap[0].velocity > 0.0);
    }

    #[test]
    fn depletion_latches_undervoltage() {
        let mut params = PlantParams::<f64>::default();
        params.battery.usable_energy = 8.0 * 2.0 / 3600.0;
        let mut d = SimDrive::new(params, &DriveConfig::default(), SensorNoise::none(), 0).unwrap();
        d.run_for(2.5).unwrap();
        let err = d.send_command(DriveCommand::idle(MotorId::M1)).unwrap_err();
        assert_eq!(err.code(), "E_FAULT_UNDERVOLTAGE");
        assert!(d.sample(MotorId::M1).unwrap().pack_voltage <= 17.5);
        d.recharge().unwrap();
        d.send_command(DriveCommand::idle(MotorId::M1)).unwrap();
        assert_eq!(d.sample(MotorId::M1).unwrap().pack_voltage, 29.1);
    }
}
